use fapn::data::{generate_dataset, SynthSpec};
use fapn::metrics::{boundary_band, boundary_miou, miou};
use fapn::ops::conv::{conv2d, KernelSpec};
use fapn::ops::deform::{deform_conv2d, OffsetField};
use fapn::optim::poly_lr;
use fapn::{pgm, Dims, LabelMap, Rng, Tensor};
use proptest::prelude::*;

fn label_map(max: usize, classes: usize) -> impl Strategy<Value = LabelMap> {
    (1..=max, 1..=max).prop_flat_map(move |(h, w)| {
        proptest::collection::vec(0..classes, h * w).prop_map(move |d| LabelMap::new(h, w, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn poly_schedule_is_monotone_and_bounded(max in 1usize..2000, base in 1e-6f64..1.0) {
        let mut prev = f64::INFINITY;
        for it in (0..=max).step_by((max / 50).max(1)) {
            let lr = poly_lr(it, max, base).unwrap();
            prop_assert!(lr <= base && lr >= 0.0 && lr <= prev);
            prev = lr;
        }
        prop_assert_eq!(poly_lr(max, max, base).unwrap(), 0.0);
        prop_assert!(poly_lr(max + 1, max, base).is_err());
    }

    #[test]
    fn pgm_label_round_trip(gt in label_map(20, 5), extra in 0usize..3) {
        let classes = 5 + extra;
        let bytes = pgm::encode(gt.height(), gt.width(), &pgm::label_pixels(&gt, classes));
        let (h, w, px) = pgm::decode(&bytes).unwrap();
        prop_assert_eq!(pgm::pixels_to_label(h, w, &px, classes).unwrap(), gt);
    }

    #[test]
    fn bands_grow_with_width_and_scores_are_bounded(gt in label_map(16, 3), pred in label_map(16, 3)) {
        let b1 = boundary_band(&gt, 1).unwrap();
        let b2 = boundary_band(&gt, 2).unwrap();
        prop_assert!(b1.mask.iter().zip(&b2.mask).all(|(a, b)| !a || *b));
        if pred.height() == gt.height() && pred.width() == gt.width() {
            let m = miou(&pred, &gt, 3).unwrap();
            let b = boundary_miou(&pred, &gt, 3, 2).unwrap().miou;
            prop_assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn integer_offsets_equal_shifted_conv(seed in any::<u64>(), dy in -2i32..=2, dx in -2i32..=2) {
        // A 1x1 kernel at integer offset (dy, dx) reads the input shifted by that amount.
        let mut rng = Rng::new(seed);
        let (h, w) = (7, 9);
        let x = Tensor::from_fn(Dims::new(1, 2, h, w).unwrap(), |_, _, _, _| rng.uniform(-1.0, 1.0));
        let spec = KernelSpec::identity(2, 1).unwrap();
        let field = Tensor::from_fn(Dims::new(1, 2, h, w).unwrap(), |_, c, _, _| if c == 0 { dy as f64 } else { dx as f64 });
        let y = deform_conv2d(&x, &spec, &OffsetField::new(field, 1).unwrap()).unwrap();
        for c in 0..2 {
            for i in 0..h as i32 {
                for j in 0..w as i32 {
                    let (si, sj) = (i + dy, j + dx);
                    let want = if si >= 0 && si < h as i32 && sj >= 0 && sj < w as i32 {
                        x.at(0, c, si as usize, sj as usize)
                    } else {
                        0.0
                    };
                    prop_assert_eq!(y.at(0, c, i as usize, j as usize), want);
                }
            }
        }
        let same = conv2d(&x, &spec, 1, 0).unwrap();
        if dy == 0 && dx == 0 {
            prop_assert_eq!(y, same);
        }
    }
}

#[test]
fn dataset_is_a_pure_function_of_seed() {
    let spec = SynthSpec { height: 32, width: 32, classes: 4, jitter: 2 };
    let a = generate_dataset(42, 6, &spec).unwrap();
    let b = generate_dataset(42, 6, &spec).unwrap();
    let c = generate_dataset(43, 6, &spec).unwrap();
    assert_eq!(fapn::data::checksum(&a), fapn::data::checksum(&b));
    assert_ne!(fapn::data::checksum(&a), fapn::data::checksum(&c));
    // A prefix of a larger dataset is the smaller dataset.
    let longer = generate_dataset(42, 9, &spec).unwrap();
    assert_eq!(fapn::data::checksum(&longer[..6]), fapn::data::checksum(&a));
}
