use std::time::Instant;

use trackmark_core::mask::{bbox_to_yolo, yolo_to_bbox};
use trackmark_core::{PixelBox, Rational, Scalar, YoloBox};

const MAX_GRID: u32 = 64;
const FULL_GRID: u32 = 16;

/// `num / den` with six decimals, ties to even, in integer arithmetic.
fn fixed6(num: i64, den: i64) -> String {
    let scaled = num * 1_000_000;
    let (q, r) = (scaled / den, scaled % den);
    let q = match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal if q % 2 == 1 => q + 1,
        _ => q,
    };
    format!("{}.{:06}", q / 1_000_000, q % 1_000_000)
}

fn expected_line(b: &PixelBox, w: u32, h: u32, class_id: u32) -> String {
    let (w, h) = (w as i64, h as i64);
    format!(
        "{class_id} {} {} {} {}",
        fixed6(b.x0 as i64 + b.x1 as i64, 2 * w),
        fixed6(b.y0 as i64 + b.y1 as i64, 2 * h),
        fixed6(b.x1 as i64 - b.x0 as i64, w),
        fixed6(b.y1 as i64 - b.y0 as i64, h),
    )
}

fn intervals(n: u32) -> Vec<(u32, u32)> {
    (0..n).flat_map(|a| (a + 1..=n).map(move |b| (a, b))).collect()
}

fn round_trip<T: Scalar>(b: &PixelBox, w: u32, h: u32) -> String {
    let line = bbox_to_yolo::<T>(b, w, h, 3).unwrap().to_line();
    let parsed = YoloBox::<T>::parse_line(&line).unwrap_or_else(|| panic!("unparsable `{line}`"));
    assert_eq!(yolo_to_bbox(&parsed, w, h).unwrap(), *b, "{w}x{h} via `{line}`");
    line
}

/// Each label field depends on one axis only, so on the larger grids every
/// x interval and every y interval goes through the full pipeline at least
/// once, paired cyclically with intervals of the other axis.
#[test]
fn every_box_on_every_grid_round_trips() {
    let start = Instant::now();
    let all: Vec<Vec<(u32, u32)>> = (0..=MAX_GRID).map(intervals).collect();
    let mut checked = 0u64;
    for w in 1..=MAX_GRID {
        for h in 1..=MAX_GRID {
            let (xs, ys) = (&all[w as usize], &all[h as usize]);
            if w <= FULL_GRID && h <= FULL_GRID {
                for &(x0, x1) in xs {
                    for &(y0, y1) in ys {
                        let b = PixelBox::new(x0, y0, x1, y1, w, h).unwrap();
                        let line = round_trip::<Rational>(&b, w, h);
                        assert_eq!(line, expected_line(&b, w, h, 3));
                        checked += 1;
                    }
                }
            } else {
                for i in 0..xs.len().max(ys.len()) {
                    let ((x0, x1), (y0, y1)) = (xs[i % xs.len()], ys[i % ys.len()]);
                    let b = PixelBox::new(x0, y0, x1, y1, w, h).unwrap();
                    let line = round_trip::<Rational>(&b, w, h);
                    assert_eq!(line, expected_line(&b, w, h, 3));
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "{checked} boxes took {elapsed:?}");
}

#[test]
fn float_scalars_round_trip_on_the_same_grids() {
    for w in (1..=MAX_GRID).step_by(3) {
        for h in [1, 7, 33, MAX_GRID] {
            let (xs, ys) = (intervals(w), intervals(h));
            for i in 0..xs.len().max(ys.len()) {
                let ((x0, x1), (y0, y1)) = (xs[i % xs.len()], ys[i % ys.len()]);
                let b = PixelBox::new(x0, y0, x1, y1, w, h).unwrap();
                let exact = round_trip::<Rational>(&b, w, h);
                assert_eq!(round_trip::<f64>(&b, w, h), exact);
                round_trip::<f32>(&b, w, h);
            }
        }
    }
}

#[test]
fn ties_round_to_even() {
    assert_eq!(fixed6(1, 16), "0.062500");
    assert_eq!(fixed6(1, 2_000_000), "0.000000");
    assert_eq!(fixed6(3, 2_000_000), "0.000002");
    let b = PixelBox::new(0, 0, 1, 1, 64, 64).unwrap();
    assert_eq!(bbox_to_yolo::<Rational>(&b, 64, 64, 0).unwrap().to_line(), "0 0.007812 0.007812 0.015625 0.015625");
}

#[test]
fn malformed_lines_are_rejected() {
    for line in ["", "0 0.5 0.5 0.5", "x 0.5 0.5 0.5 0.5", "0 0.5 0.5 0.5 0.5 0.5", "-1 0.5 0.5 0.5 0.5"] {
        assert!(YoloBox::<Rational>::parse_line(line).is_none(), "{line:?}");
    }
    let outside = YoloBox::<Rational>::parse_line("0 0.900000 0.500000 0.400000 0.200000").unwrap();
    assert!(yolo_to_bbox(&outside, 10, 10).is_err());
}
