use cold_core::objectives::{aspect_ratio, diversity, rotation, thickness, ImageGray, ObjectiveError};
use proptest::prelude::*;

fn image(side: usize, pixels: Vec<f64>) -> ImageGray {
    ImageGray::new(side, 255.0, pixels).unwrap()
}

fn binary_image(side: usize) -> impl Strategy<Value = ImageGray> {
    prop::collection::vec(prop::bool::weighted(0.3), side * side)
        .prop_map(move |on| image(side, on.into_iter().map(|b| if b { 255.0 } else { 0.0 }).collect()))
}

fn gray_images(side: usize, max_t: usize) -> impl Strategy<Value = Vec<ImageGray>> {
    prop::collection::vec(prop::collection::vec(0.0..255.0f64, side * side), 2..=max_t)
        .prop_map(move |v| v.into_iter().map(|p| image(side, p)).collect())
}

/// Ordered-pair average of per-pixel squared distances.
fn diversity_oracle(images: &[ImageGray]) -> f64 {
    let t = images.len();
    let mut total = 0.0;
    for i in 0..t {
        for j in 0..t {
            if i != j {
                let d: f64 = images[i].pixels().iter().zip(images[j].pixels()).map(|(a, b)| (a - b).powi(2)).sum();
                total += d / images[i].pixels().len() as f64;
            }
        }
    }
    total / (t * (t - 1)) as f64
}

#[test]
fn fixture_values() {
    let blank = image(28, vec![0.0; 784]);
    assert_eq!(thickness(&blank), 0.0);
    assert_eq!(thickness(&image(28, vec![255.0; 784])), 255.0);
    assert_eq!(thickness(&image(2, vec![0.0, 255.0, 0.0, 255.0])), 127.5);
    assert_eq!(aspect_ratio(&blank), Err(ObjectiveError::NoQualifyingRows));
    assert!(rotation(&blank).is_err());

    let mut px = vec![0.0; 784];
    for r in 5..=10 {
        for c in 3..=12 {
            px[r * 28 + c] = 255.0;
        }
    }
    assert_eq!(aspect_ratio(&image(28, px)).unwrap(), 1.8);

    let mut single_row = vec![0.0; 784];
    single_row[3 * 28 + 4] = 255.0;
    single_row[3 * 28 + 9] = 255.0;
    assert_eq!(aspect_ratio(&image(28, single_row)), Err(ObjectiveError::ZeroHeight));

    // exactly m/2 does not qualify
    assert!(aspect_ratio(&image(2, vec![127.5; 4])).is_err());

    let mut a = vec![0.0; 784];
    let b = a.clone();
    a[400] = 1.0;
    assert_eq!(diversity(&[image(28, a), image(28, b)]).unwrap(), 1.0 / 784.0);
}

#[test]
fn diagonal_fixtures() {
    // on-pixels along direction (1, 1) in the y-up frame
    let mut px = vec![0.0; 28 * 28];
    for i in 0..28 {
        px[(27 - i) * 28 + i] = 255.0;
    }
    let img = image(28, px);
    assert_eq!(rotation(&img).unwrap().slope, -1.0);
    // an elongated cloud along (1, 2): minor axis slope −1/2
    let mut px = vec![0.0; 40 * 40];
    for t in 0..18 {
        for w in 0..2 {
            let (x, y) = (2 + t + w, 2 + 2 * t);
            px[(39 - y) * 40 + x] = 255.0;
        }
    }
    let s = rotation(&image(40, px)).unwrap().slope;
    assert!((s + 0.5).abs() < 0.1, "{s}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn thickness_linear_and_permutation_invariant(p in prop::collection::vec(0.0..100.0f64, 16), c in 0.0..2.5f64) {
        let base = thickness(&image(4, p.clone()));
        let scaled = thickness(&image(4, p.iter().map(|v| v * c).collect()));
        prop_assert!((scaled - c * base).abs() < 1e-10);
        let mut rev = p.clone();
        rev.reverse();
        prop_assert!((thickness(&image(4, rev)) - base).abs() < 1e-12);
    }

    #[test]
    fn aspect_transpose_reciprocal(img in binary_image(9)) {
        if let (Ok(a), Ok(b)) = (aspect_ratio(&img), aspect_ratio(&img.transpose())) {
            if a != 0.0 {
                prop_assert!((a * b - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_coordinate_transforms(img in binary_image(10)) {
        // transposition maps (x, y) to (−y, −x): slope s becomes 1/s
        // a horizontal flip maps x to −x: slope s becomes −s
        if let Ok(r) = rotation(&img) {
            let flipped = rotation(&img.flip_horizontal()).unwrap();
            if !r.vertical && r.slope != 0.0 {
                prop_assert!((flipped.slope + r.slope).abs() < 1e-9 * r.slope.abs().max(1.0));
                let t = rotation(&img.transpose()).unwrap();
                prop_assert!(!t.vertical);
                prop_assert!((t.slope * r.slope - 1.0).abs() < 1e-9);
            }
            // binarisation-preserving rescale
            let dim: Vec<f64> = img.pixels().iter().map(|v| if *v > 127.5 { 200.0 } else { 10.0 }).collect();
            prop_assert_eq!(rotation(&image(10, dim)).unwrap(), r);
        }
    }

    #[test]
    fn diversity_matches_double_loop(imgs in gray_images(3, 6), c in 0.0..3.0f64) {
        let u = diversity(&imgs).unwrap();
        prop_assert!(u >= 0.0);
        prop_assert!((u - diversity_oracle(&imgs)).abs() < 1e-9 * u.max(1.0));
        let mut rev = imgs.clone();
        rev.reverse();
        prop_assert!((diversity(&rev).unwrap() - u).abs() < 1e-9 * u.max(1.0));
        let scaled: Vec<ImageGray> = imgs.iter().map(|im| ImageGray::new(3, 765.0, im.pixels().iter().map(|v| v * c).collect()).unwrap()).collect();
        prop_assert!((diversity(&scaled).unwrap() - c * c * u).abs() < 1e-8 * (c * c * u).max(1.0));
        let same = vec![imgs[0].clone(); imgs.len()];
        prop_assert_eq!(diversity(&same).unwrap(), 0.0);
    }
}
