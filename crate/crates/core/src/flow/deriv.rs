use crate::image::Plane;

/// Central difference along x with replicate border.
pub(crate) fn dx(p: &Plane) -> Plane {
    Plane::from_fn(p.width, p.height, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (p.get_clamped(x + 1, y) - p.get_clamped(x - 1, y))
    })
}

/// Central difference along y with replicate border.
pub(crate) fn dy(p: &Plane) -> Plane {
    Plane::from_fn(p.width, p.height, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (p.get_clamped(x, y + 1) - p.get_clamped(x, y - 1))
    })
}
