use fapn::gradcheck::{check, worst, Probe};
use fapn::{Dims, Rng, Tape, Tensor, Var};

const EPS: f64 = 1e-5;

fn random(rng: &mut Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    let [n, c, h, w] = shape;
    Tensor::from_fn(Dims::new(n, c, h, w).unwrap(), |_, _, _, _| rng.uniform(lo, hi))
}

/// Random projection so that every output element carries its own weight.
fn project(t: &mut Tape, out: Var, seed: u64) -> fapn::Result<Var> {
    let mut rng = Rng::new(seed ^ 0xA5A5);
    let r = random(&mut rng, t.dims(out).as_array(), -1.0, 1.0);
    let r = t.constant(r);
    let m = t.mul(out, r)?;
    Ok(t.sum(m))
}

/// Offsets whose fractional part stays in [0.25, 0.75] so no sample point
/// lies within 0.25 px of a grid line.
fn off_grid_offsets(rng: &mut Rng, shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = shape;
    Tensor::from_fn(Dims::new(n, c, h, w).unwrap(), |_, _, _, _| {
        let whole = rng.below(5) as f64 - 2.0;
        whole + rng.uniform(0.25, 0.75)
    })
}

#[test]
fn elementwise_ops() {
    for seed in 0..5 {
        let mut rng = Rng::new(seed);
        let a = random(&mut rng, [2, 3, 3, 2], -1.0, 1.0);
        let b = random(&mut rng, [2, 3, 3, 2], -1.0, 1.0);
        let c = random(&mut rng, [1, 3, 1, 1], -1.0, 1.0);
        let reports = check(&[a, b, c], EPS, Probe::All, &[], |t, v| {
            let s = t.sub(v[0], v[1])?;
            let m = t.mul(s, v[2])?;
            let sg = t.sigmoid(m);
            let ad = t.add(sg, v[0])?;
            let cat = t.concat_channels(ad, v[1])?;
            let sc = t.scale(cat, 0.7);
            project(t, sc, seed)
        })
        .unwrap();
        assert!(worst(&reports) <= 1e-6, "seed {seed}: {reports:?}");
    }
}

#[test]
fn relu_in_smooth_region() {
    let mut rng = Rng::new(3);
    let x = Tensor::from_fn(Dims::new(1, 2, 3, 3).unwrap(), |_, _, _, _| {
        let m = rng.uniform(0.5, 2.0);
        if rng.below(2) == 0 { m } else { -m }
    });
    let reports = check(&[x], EPS, Probe::All, &[], |t, v| {
        let r = t.relu(v[0]);
        project(t, r, 3)
    })
    .unwrap();
    assert!(worst(&reports) <= 1e-6, "{reports:?}");
}

#[test]
fn conv2d_all_slots() {
    for seed in 0..5 {
        let mut rng = Rng::new(10 + seed);
        let x = random(&mut rng, [2, 3, 6, 5], -1.0, 1.0);
        let w = random(&mut rng, [4, 3, 3, 3], -1.0, 1.0);
        let b = random(&mut rng, [1, 4, 1, 1], -1.0, 1.0);
        let stride = 1 + (seed as usize % 2);
        let reports = check(&[x, w, b], EPS, Probe::All, &[], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], stride, 1)?;
            project(t, y, seed)
        })
        .unwrap();
        assert!(worst(&reports) <= 1e-6, "seed {seed}: {reports:?}");
    }
}

#[test]
fn conv_transpose2d_all_slots() {
    for seed in 0..5 {
        let mut rng = Rng::new(20 + seed);
        let x = random(&mut rng, [1, 3, 3, 4], -1.0, 1.0);
        let w = random(&mut rng, [3, 2, 4, 4], -1.0, 1.0);
        let b = random(&mut rng, [1, 2, 1, 1], -1.0, 1.0);
        let reports = check(&[x, w, b], EPS, Probe::All, &[], |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], v[2], 2, 1)?;
            project(t, y, seed)
        })
        .unwrap();
        assert!(worst(&reports) <= 1e-6, "seed {seed}: {reports:?}");
    }
}

#[test]
fn pool_and_upsample() {
    for seed in 0..5 {
        let mut rng = Rng::new(30 + seed);
        let x = random(&mut rng, [2, 3, 4, 3], -1.0, 1.0);
        let reports = check(&[x], EPS, Probe::All, &[], |t, v| {
            let u = t.upsample_nearest2x(v[0]);
            let p = t.global_avg_pool(u);
            let s = t.sigmoid(p);
            let a = project(t, s, seed)?;
            let u3 = t.upsample_nearest(v[0], 3)?;
            let b = project(t, u3, seed + 1)?;
            t.add(a, b)
        })
        .unwrap();
        assert!(worst(&reports) <= 1e-6, "seed {seed}: {reports:?}");
    }
}

#[test]
fn deform_conv2d_input_weights_offsets() {
    for seed in 0..5 {
        let mut rng = Rng::new(40 + seed);
        let x = random(&mut rng, [1, 3, 6, 6], -1.0, 1.0);
        let w = random(&mut rng, [2, 3, 3, 3], -1.0, 1.0);
        let b = random(&mut rng, [1, 2, 1, 1], -1.0, 1.0);
        let off = off_grid_offsets(&mut rng, [1, 18, 6, 6]);
        let reports = check(&[x, w, b, off], EPS, Probe::All, &[], |t, v| {
            let y = t.deform_conv2d(v[0], v[1], v[2], v[3])?;
            project(t, y, seed)
        })
        .unwrap();
        assert!(worst(&reports) <= 1e-5, "seed {seed}: {reports:?}");
    }
}

#[test]
fn cross_entropy_and_mean() {
    for seed in 0..5 {
        let mut rng = Rng::new(50 + seed);
        let logits = random(&mut rng, [1, 4, 3, 3], -2.0, 2.0);
        let labels: Vec<usize> = (0..9).map(|_| rng.below(4)).collect();
        let reports = check(&[logits], EPS, Probe::All, &[], |t, v| {
            let ce = t.cross_entropy(v[0], &labels)?;
            let m = t.mean(v[0]);
            let ms = t.scale(m, 0.3);
            t.add(ce, ms)
        })
        .unwrap();
        assert!(worst(&reports) <= 1e-6, "seed {seed}: {reports:?}");
    }
}
