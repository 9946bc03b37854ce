//! Brute-force reference implementations shared by the integration tests.
//!
//! These share no code with the library: connectivity is computed by
//! relaxing a reachability set until it stops changing, and components by
//! min-label propagation.

#![allow(dead_code)]

use image::{Rgb, RgbImage};
use rand::rngs::StdRng;
use rand::Rng;
use trackmark_core::segmentation::{BoxPrompt, ObjectPromptSet, PointPrompt, Polarity};
use trackmark_core::{ObjectId, PixelBox};

pub fn oid(k: u16) -> ObjectId {
    ObjectId::new(k).unwrap()
}

fn close(a: Rgb<u8>, b: Rgb<u8>, tolerance: u32) -> bool {
    let d2: i64 = (0..3).map(|c| (a[c] as i64 - b[c] as i64).pow(2)).sum();
    d2 <= (tolerance as i64).pow(2)
}

fn in_domain(domain: &Option<Vec<bool>>, i: usize) -> bool {
    domain.as_ref().is_none_or(|d| d[i])
}

fn box_domain(w: u32, h: u32, boxes: &[BoxPrompt]) -> Option<Vec<bool>> {
    if boxes.is_empty() {
        return None;
    }
    let mut d = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            d[(y * w + x) as usize] = boxes.iter().any(|b| b.0.contains(x, y));
        }
    }
    Some(d)
}

/// Pixels 4-connected to `seed` through pixels within `tolerance` of the
/// seed color, staying inside `domain`.
pub fn reach(img: &RgbImage, seed: (u32, u32), tolerance: u32, domain: &Option<Vec<bool>>) -> Vec<bool> {
    let (w, h) = img.dimensions();
    let mut set = vec![false; (w * h) as usize];
    let s = (seed.1 * w + seed.0) as usize;
    if !in_domain(domain, s) {
        return set;
    }
    let reference = *img.get_pixel(seed.0, seed.1);
    set[s] = true;
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if set[i] || !in_domain(domain, i) || !close(*img.get_pixel(x, y), reference, tolerance) {
                    continue;
                }
                let touches = (x > 0 && set[i - 1])
                    || (x + 1 < w && set[i + 1])
                    || (y > 0 && set[i - w as usize])
                    || (y + 1 < h && set[i + w as usize]);
                if touches {
                    set[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return set;
        }
    }
}

/// Largest exact-color 4-connected component inside `b`; ties go to the
/// component whose first pixel comes earliest in raster order.
pub fn largest_component(img: &RgbImage, b: &PixelBox) -> Vec<bool> {
    let (w, h) = img.dimensions();
    let n = (w * h) as usize;
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                let i = (y * w + x) as usize;
                let p = *img.get_pixel(x, y);
                let mut best = label[i];
                let mut consider = |nx: u32, ny: u32| {
                    if b.contains(nx, ny) && *img.get_pixel(nx, ny) == p {
                        best = best.min(label[(ny * w + nx) as usize]);
                    }
                };
                if x > 0 {
                    consider(x - 1, y);
                }
                if x + 1 < w {
                    consider(x + 1, y);
                }
                if y > 0 {
                    consider(x, y - 1);
                }
                if y + 1 < h {
                    consider(x, y + 1);
                }
                if best < label[i] {
                    label[i] = best;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut sizes = std::collections::BTreeMap::<usize, usize>::new();
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            *sizes.entry(label[(y * w + x) as usize]).or_default() += 1;
        }
    }
    let mut out = vec![false; n];
    // BTreeMap iterates labels in raster order; keep the first maximum.
    let Some((&winner, _)) = sizes.iter().rev().max_by_key(|(_, &s)| s) else {
        return out;
    };
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            let i = (y * w + x) as usize;
            out[i] = label[i] == winner;
        }
    }
    out
}

/// Selection of one object under the reference-backend rules.
pub fn select(img: &RgbImage, set: &ObjectPromptSet, tolerance: u32) -> Vec<bool> {
    let (w, h) = img.dimensions();
    let domain = box_domain(w, h, &set.boxes);
    let mut selected = vec![false; (w * h) as usize];
    let positives: Vec<&PointPrompt> = set.points.iter().filter(|p| p.polarity == Polarity::Positive).collect();
    let mut add = |part: Vec<bool>| {
        for (s, p) in selected.iter_mut().zip(part) {
            *s |= p;
        }
    };
    if positives.is_empty() {
        for b in &set.boxes {
            add(largest_component(img, &b.0));
        }
    } else {
        for p in positives {
            add(reach(img, (p.x, p.y), tolerance, &domain));
        }
    }
    for p in set.points.iter().filter(|p| p.polarity == Polarity::Negative) {
        for (s, r) in selected.iter_mut().zip(reach(img, (p.x, p.y), tolerance, &domain)) {
            if r {
                *s = false;
            }
        }
    }
    selected
}

/// Label image for several objects; the higher id wins where they overlap.
pub fn label_image(img: &RgbImage, sets: &[ObjectPromptSet], tolerance: u32) -> Vec<u16> {
    let (w, h) = img.dimensions();
    let mut labels = vec![0u16; (w * h) as usize];
    for set in sets {
        for (l, s) in labels.iter_mut().zip(select(img, set, tolerance)) {
            if s && set.object_id.get() > *l {
                *l = set.object_id.get();
            }
        }
    }
    labels
}

const PALETTE: [[u8; 3]; 5] = [[20, 20, 20], [200, 30, 30], [30, 200, 30], [30, 30, 200], [205, 35, 30]];

/// Random rectangles and speckle over a random background.
pub fn random_scene(rng: &mut StdRng) -> RgbImage {
    let w = rng.gen_range(12..=40);
    let h = rng.gen_range(12..=40);
    let mut img = RgbImage::from_pixel(w, h, Rgb(PALETTE[rng.gen_range(0..PALETTE.len())]));
    for _ in 0..rng.gen_range(2..=8) {
        let x0 = rng.gen_range(0..w);
        let y0 = rng.gen_range(0..h);
        let x1 = rng.gen_range(x0 + 1..=w);
        let y1 = rng.gen_range(y0 + 1..=h);
        let c = Rgb(PALETTE[rng.gen_range(0..PALETTE.len())]);
        for y in y0..y1 {
            for x in x0..x1 {
                img.put_pixel(x, y, c);
            }
        }
    }
    for _ in 0..rng.gen_range(0..(w * h / 8)) {
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
        img.put_pixel(x, y, Rgb(PALETTE[rng.gen_range(0..PALETTE.len())]));
    }
    img
}

fn random_box(rng: &mut StdRng, w: u32, h: u32) -> PixelBox {
    let x0 = rng.gen_range(0..w);
    let y0 = rng.gen_range(0..h);
    PixelBox::new(x0, y0, rng.gen_range(x0 + 1..=w), rng.gen_range(y0 + 1..=h), w, h).unwrap()
}

fn random_point(rng: &mut StdRng, w: u32, h: u32, polarity: Polarity) -> PointPrompt {
    PointPrompt { x: rng.gen_range(0..w), y: rng.gen_range(0..h), polarity }
}

/// One to three objects, each with points, a box, or both.
pub fn random_prompts(rng: &mut StdRng, w: u32, h: u32) -> Vec<ObjectPromptSet> {
    let count = rng.gen_range(1..=3);
    (1..=count)
        .map(|k| {
            let id = oid(k * 2 + rng.gen_range(0..2));
            let mut set = ObjectPromptSet::points(id, Vec::new());
            match rng.gen_range(0..3) {
                0 => {
                    for _ in 0..rng.gen_range(1..=2) {
                        set.points.push(random_point(rng, w, h, Polarity::Positive));
                    }
                }
                1 => set.boxes.push(BoxPrompt(random_box(rng, w, h))),
                _ => {
                    let b = random_box(rng, w, h);
                    let p = PointPrompt {
                        x: rng.gen_range(b.x0..b.x1),
                        y: rng.gen_range(b.y0..b.y1),
                        polarity: Polarity::Positive,
                    };
                    set.boxes.push(BoxPrompt(b));
                    set.points.push(p);
                }
            }
            if rng.gen_bool(0.4) {
                set.points.push(random_point(rng, w, h, Polarity::Negative));
            }
            set
        })
        .collect()
}
