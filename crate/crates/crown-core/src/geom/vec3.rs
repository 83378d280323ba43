//! Small helpers on `[f64; 3]`. Points, normals, and mesh vertices are
//! plain arrays throughout the crate; these free functions cover the
//! handful of operations the pipeline needs.

pub fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm_sq(a: [f64; 3]) -> f64 {
    dot(a, a)
}

pub fn norm(a: [f64; 3]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm_sq(sub(a, b))
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Unit vector in the direction of `a`, or `None` when `‖a‖ < floor`.
pub fn normalized(a: [f64; 3], floor: f64) -> Option<[f64; 3]> {
    let n = norm(a);
    if n < floor {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

pub fn is_finite(a: [f64; 3]) -> bool {
    a.iter().all(|c| c.is_finite())
}

/// Unnormalized face normal `(b−a)×(c−a)`; its length is twice the
/// triangle area.
pub fn face_normal_raw(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    cross(sub(b, a), sub(c, a))
}

pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    0.5 * norm(face_normal_raw(a, b, c))
}
