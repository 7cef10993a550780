//! Color coding of flow fields: hue is direction, saturation is magnitude.

use crate::image::{ImageBuffer, Plane};

use super::FlowField;

fn color_wheel() -> Vec<[f32; 3]> {
    let segs = [(15, 0), (6, 1), (4, 2), (11, 3), (13, 4), (6, 5)];
    let mut wheel = Vec::with_capacity(55);
    for (n, seg) in segs {
        for i in 0..n {
            let t = i as f32 / n as f32;
            wheel.push(match seg {
                0 => [1.0, t, 0.0],
                1 => [1.0 - t, 1.0, 0.0],
                2 => [0.0, 1.0, t],
                3 => [0.0, 1.0 - t, 1.0],
                4 => [t, 0.0, 1.0],
                _ => [1.0, 0.0, 1.0 - t],
            });
        }
    }
    wheel
}

/// Renders `flow` with magnitudes scaled by `max_norm` (the field maximum
/// when `None`). Non-finite vectors are black.
pub fn flow_to_color(flow: &FlowField, max_norm: Option<f32>) -> ImageBuffer {
    let wheel = color_wheel();
    let n = wheel.len() as f32;
    let scale = max_norm.unwrap_or_else(|| flow.max_norm()).max(1e-6);
    let (w, h) = (flow.width(), flow.height());
    let mut planes = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            let (u, v) = (u / scale, v / scale);
            let rad = u.hypot(v);
            let a = (-v).atan2(-u) / std::f32::consts::PI;
            let fk = (a + 1.0) / 2.0 * (n - 1.0);
            let k0 = fk.floor() as usize % wheel.len();
            let k1 = (k0 + 1) % wheel.len();
            let f = fk - fk.floor();
            for c in 0..3 {
                let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
                let col = if rad <= 1.0 {
                    1.0 - rad * (1.0 - col)
                } else {
                    col * 0.75
                };
                planes[c].data[y * w + x] = col.clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::from_planes(&planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_white_and_directions_differ() {
        let f = FlowField::from_fn(3, 1, |x, _| match x {
            0 => (0.0, 0.0),
            1 => (1.0, 0.0),
            _ => (-1.0, 0.0),
        });
        let img = flow_to_color(&f, Some(1.0));
        assert_eq!(img.channels(), 3);
        assert!((0..3).all(|c| img.get(0, 0, c) == 1.0));
        let a: Vec<f32> = (0..3).map(|c| img.get(1, 0, c)).collect();
        let b: Vec<f32> = (0..3).map(|c| img.get(2, 0, c)).collect();
        assert_ne!(a, b);
    }
}
