mod support;

use rand::rngs::StdRng;
use rand::SeedableRng;
use trackmark_core::segmentation::{ObjectPromptSet, PointPrompt, SegmenterConfig, SegmenterRegistry};
use trackmark_core::{Frame, PixelBox};

use support::{label_image, oid, random_prompts, random_scene};

fn run(img: &image::RgbImage, prompts: &[ObjectPromptSet], tolerance: u32) -> Vec<u16> {
    let registry = SegmenterRegistry::with_defaults();
    let config = SegmenterConfig::named("region-grow").with_param("tolerance", tolerance);
    let mut handle = registry.init(&config).unwrap();
    handle.set_image(&Frame { index: 0, timestamp: 0.0, pixels: img.clone() }).unwrap();
    handle.predict_mask(prompts).unwrap().labels().to_vec()
}

#[test]
fn matches_brute_force_on_random_scenes() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for scene in 0..50 {
        let img = random_scene(&mut rng);
        let prompts = random_prompts(&mut rng, img.width(), img.height());
        assert_eq!(run(&img, &prompts, 0), label_image(&img, &prompts, 0), "scene {scene}: {prompts:?}");
    }
}

#[test]
fn tolerant_point_fill_matches_brute_force() {
    let mut rng = StdRng::seed_from_u64(7);
    for scene in 0..20 {
        let img = random_scene(&mut rng);
        let (w, h) = img.dimensions();
        let prompts: Vec<_> = random_prompts(&mut rng, w, h)
            .into_iter()
            .filter(|s| s.boxes.is_empty())
            .collect();
        if prompts.is_empty() {
            continue;
        }
        assert_eq!(run(&img, &prompts, 12), label_image(&img, &prompts, 12), "scene {scene}");
    }
}

#[test]
fn uniform_square_is_selected_exactly() {
    let mut img = image::RgbImage::from_pixel(64, 48, image::Rgb([10, 10, 10]));
    for y in 14..34 {
        for x in 20..40 {
            img.put_pixel(x, y, image::Rgb([240, 200, 0]));
        }
    }
    let labels = run(&img, &[ObjectPromptSet::points(oid(1), vec![PointPrompt::positive(25, 20)])], 0);
    for y in 0..48u32 {
        for x in 0..64u32 {
            let inside = (20..40).contains(&x) && (14..34).contains(&y);
            assert_eq!(labels[(y * 64 + x) as usize] == 1, inside);
        }
    }
    let boxed = run(
        &img,
        &[ObjectPromptSet::boxes(oid(1), vec![PixelBox::new(18, 12, 42, 36, 64, 48).unwrap()])],
        0,
    );
    assert_eq!(boxed, labels);
}
