//! Hexcone RGB <-> HSV conversion.
//!
//! Hue is in degrees on `[0, 360)`; saturation and value are in `[0, 1]`.
//! Achromatic colours (`s == 0`) always carry `h == 0`.

use serde::{Deserialize, Serialize};

use crate::raster::RgbPixel;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HsvPixel {
    pub h: f32,
    pub s: f32,
    pub v: f32,
}

impl HsvPixel {
    pub fn new(h: f32, s: f32, v: f32) -> Self {
        HsvPixel {
            h: wrap_degrees(h),
            s,
            v,
        }
    }
}

/// Reduces an angle into `[0, 360)`.
#[inline]
pub fn wrap_degrees(h: f32) -> f32 {
    let w = h.rem_euclid(360.0);
    // rem_euclid can return exactly 360.0 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

#[inline]
pub fn rgb_to_hsv(p: RgbPixel) -> HsvPixel {
    let RgbPixel { r, g, b } = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 || max <= 0.0 {
        return HsvPixel {
            h: 0.0,
            s: 0.0,
            v: max,
        };
    }
    let s = delta / max;
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    HsvPixel {
        h: wrap_degrees(h),
        s,
        v: max,
    }
}

#[inline]
pub fn hsv_to_rgb(p: HsvPixel) -> RgbPixel {
    let HsvPixel { h, s, v } = p;
    if s <= 0.0 {
        return RgbPixel::gray(v);
    }
    let hp = wrap_degrees(h) / 60.0;
    let sector = hp.floor();
    let f = hp - sector;
    let lo = v * (1.0 - s);
    let falling = v * (1.0 - s * f);
    let rising = v * (1.0 - s * (1.0 - f));
    match sector as u32 {
        0 => RgbPixel::new(v, rising, lo),
        1 => RgbPixel::new(falling, v, lo),
        2 => RgbPixel::new(lo, v, rising),
        3 => RgbPixel::new(lo, falling, v),
        4 => RgbPixel::new(rising, lo, v),
        _ => RgbPixel::new(v, lo, falling),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f32, b: f32, tol: f32) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pure_red() {
        let hsv = rgb_to_hsv(RgbPixel::new(1.0, 0.0, 0.0));
        assert_eq!(hsv, HsvPixel { h: 0.0, s: 1.0, v: 1.0 });
    }

    #[test]
    fn gray_is_achromatic() {
        let hsv = rgb_to_hsv(RgbPixel::gray(0.5));
        assert_eq!(hsv, HsvPixel { h: 0.0, s: 0.0, v: 0.5 });
        assert_eq!(hsv_to_rgb(HsvPixel::new(0.0, 0.0, 0.7)), RgbPixel::gray(0.7));
    }

    #[test]
    fn pure_green_axis() {
        assert_eq!(
            hsv_to_rgb(HsvPixel::new(120.0, 1.0, 1.0)),
            RgbPixel::new(0.0, 1.0, 0.0)
        );
    }

    // Hand evaluation: max = b = 0.6, min = 0.2, delta = 0.4,
    // h = 60 * ((0.2 - 0.4) / 0.4 + 4) = 210, s = 0.4 / 0.6.
    #[test]
    fn steel_blue_sample() {
        let hsv = rgb_to_hsv(RgbPixel::new(0.2, 0.4, 0.6));
        assert!(close(hsv.h, 210.0, 1e-4), "{hsv:?}");
        assert!(close(hsv.s, 0.666_666_7, 1e-6));
        assert!(close(hsv.v, 0.6, 1e-7));

        let rgb = hsv_to_rgb(HsvPixel::new(210.0, 0.6667, 0.6));
        assert!(close(rgb.r, 0.2, 1e-4), "{rgb:?}");
        assert!(close(rgb.g, 0.4, 1e-4));
        assert!(close(rgb.b, 0.6, 1e-6));
    }

    #[test]
    fn black_has_zero_saturation() {
        assert_eq!(rgb_to_hsv(RgbPixel::BLACK), HsvPixel::default());
    }

    #[test]
    fn wrap_handles_negative_and_overflow() {
        assert_eq!(wrap_degrees(-90.0), 270.0);
        assert_eq!(wrap_degrees(720.0), 0.0);
        assert_eq!(wrap_degrees(-1e-9), 0.0);
        assert!(wrap_degrees(-1e-9) < 360.0);
    }

    proptest! {
        #[test]
        fn round_trip(r in 0.0f32..=1.0, g in 0.0f32..=1.0, b in 0.0f32..=1.0) {
            let p = RgbPixel::new(r, g, b);
            let back = hsv_to_rgb(rgb_to_hsv(p));
            prop_assert!(p.max_abs_diff(back) <= 1e-6, "{p:?} -> {back:?}");
        }

        #[test]
        fn hue_periodicity(h in 0.0f32..360.0, s in 0.0f32..=1.0, v in 0.0f32..=1.0) {
            let a = hsv_to_rgb(HsvPixel { h, s, v });
            let b = hsv_to_rgb(HsvPixel { h: h + 360.0, s, v });
            prop_assert!(a.max_abs_diff(b) <= 1e-6);
        }

        #[test]
        fn grayscale_survives_exactly(v in 0.0f32..=1.0) {
            let p = RgbPixel::gray(v);
            let hsv = rgb_to_hsv(p);
            prop_assert_eq!(hsv.s, 0.0);
            prop_assert_eq!(hsv.h, 0.0);
            prop_assert_eq!(hsv_to_rgb(hsv), p);
        }

        #[test]
        fn hsv_ranges(r in 0.0f32..=1.0, g in 0.0f32..=1.0, b in 0.0f32..=1.0) {
            let hsv = rgb_to_hsv(RgbPixel::new(r, g, b));
            prop_assert!((0.0..360.0).contains(&hsv.h));
            prop_assert!((0.0..=1.0).contains(&hsv.s));
            prop_assert!((0.0..=1.0).contains(&hsv.v));
        }
    }
}
