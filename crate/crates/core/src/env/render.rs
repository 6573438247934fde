use super::{CarState, DomainSpec, EnvConfig, Track};
use crate::image::Image;

/// Fraction of the frame height below the car; the camera looks ahead.
const CAR_ROW_FRACTION: f64 = 0.75;
const CAR_HALF_WIDTH: f64 = 0.03;
const CAR_HALF_HEIGHT: f64 = 0.05;

/// Screen geometry shared by rendering and the mask oracles.
///
/// The view spans one world unit horizontally (`lateral in [-0.5, 0.5]`) and
/// one world unit vertically, scrolling with the car's progress.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderLayout {
    pub size: usize,
    /// Pixel-space row of the car centre (row `r` spans `[r, r + 1)`).
    pub car_row: f64,
}

impl RenderLayout {
    pub fn new(config: &EnvConfig) -> Self {
        Self {
            size: config.image_size,
            car_row: CAR_ROW_FRACTION * config.image_size as f64,
        }
    }

    /// World progress coordinate at the centre of pixel row `row`.
    #[inline]
    pub fn row_to_world(&self, row: usize, progress: f64) -> f64 {
        progress + (self.car_row - (row as f64 + 0.5)) / self.size as f64
    }

    /// World lateral coordinate at the centre of pixel column `col`.
    #[inline]
    pub fn col_to_world(&self, col: usize) -> f64 {
        (col as f64 + 0.5) / self.size as f64 - 0.5
    }

    /// Half-open column range covered by the road at lateral centre `c`.
    fn road_span(&self, c: f64, half_width: f64) -> (usize, usize) {
        let s = self.size as f64;
        let lo = ((c - half_width + 0.5) * s - 0.5).ceil().max(0.0);
        let hi = ((c + half_width + 0.5) * s - 0.5).floor() + 1.0;
        let hi = hi.min(s);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    /// Inclusive-exclusive pixel box of the car.
    pub fn car_box(&self, lateral: f64) -> ((usize, usize), (usize, usize)) {
        let s = self.size as f64;
        let xc = (lateral + 0.5) * s;
        let (hw, hh) = (CAR_HALF_WIDTH * s, CAR_HALF_HEIGHT * s);
        let span = |centre: f64, half: f64| {
            // pixel p is inside when |p + 0.5 - centre| <= half
            let lo = (centre - half - 0.5).ceil().max(0.0);
            let hi = ((centre + half - 0.5).floor() + 1.0).min(s);
            if hi <= lo {
                (0, 0)
            } else {
                (lo as usize, hi as usize)
            }
        };
        (span(self.car_row, hh), span(xc, hw))
    }
}

/// Draw `state` under `domain`: background, road band, car, then blob.
pub fn render(state: &CarState, domain: &DomainSpec, config: &EnvConfig) -> Image {
    let layout = RenderLayout::new(config);
    let track = Track::for_state(state, config);
    let n = config.image_size;
    let mut img = Image::filled(n, n, domain.background_rgb);
    for row in 0..n {
        let c = track.centerline(layout.row_to_world(row, state.progress));
        let (lo, hi) = layout.road_span(c, config.half_width);
        if hi > lo {
            img.fill_span(row, lo, hi, domain.road_rgb);
        }
    }
    let ((r0, r1), (c0, c1)) = layout.car_box(state.lateral);
    for row in r0..r1 {
        if c1 > c0 {
            img.fill_span(row, c0, c1, domain.car_rgb);
        }
    }
    if let Some(blob) = &domain.blob {
        let r = blob.radius.ceil() as isize + 1;
        let (cx, cy) = (blob.center[0] as isize, blob.center[1] as isize);
        for row in (cy - r).max(0)..(cy + r + 1).min(n as isize) {
            for col in (cx - r).max(0)..(cx + r + 1).min(n as isize) {
                if blob.covers(row as usize, col as usize) {
                    img.put(row as usize, col as usize, blob.rgb);
                }
            }
        }
    }
    img
}

/// Row-major mask of the road band for `state`, including pixels that the
/// car or a blob paints over.
pub fn road_mask(state: &CarState, config: &EnvConfig) -> Vec<bool> {
    let layout = RenderLayout::new(config);
    let track = Track::for_state(state, config);
    let n = config.image_size;
    let mut mask = vec![false; n * n];
    for row in 0..n {
        let c = track.centerline(layout.row_to_world(row, state.progress));
        let (lo, hi) = layout.road_span(c, config.half_width);
        mask[row * n + lo..row * n + hi].iter_mut().for_each(|m| *m = true);
    }
    mask
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelClass {
    Background,
    Road,
    Car,
    Blob,
}

/// Label each pixel by exact match against the domain palette; `None` for
/// colours outside it. The blob colour wins when it coincides with another.
pub fn pixel_classes(img: &Image, domain: &DomainSpec) -> Vec<Option<PixelClass>> {
    img.raw()
        .chunks_exact(3)
        .map(|px| {
            let px = [px[0], px[1], px[2]];
            match domain.blob {
                Some(b) if b.rgb == px => Some(PixelClass::Blob),
                _ if px == domain.car_rgb => Some(PixelClass::Car),
                _ if px == domain.road_rgb => Some(PixelClass::Road),
                _ if px == domain.background_rgb => Some(PixelClass::Background),
                _ => None,
            }
        })
        .collect()
}
