//! Quadrature rules on the reference triangle and on facets.

/// A point given by barycentric coordinates with a weight normalised so the
/// weights sum to one (multiply by the cell area).
#[derive(Debug, Clone, Copy)]
pub struct TriPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Six-point symmetric rule, exact for polynomials of degree 4.
pub fn triangle_degree4() -> [TriPoint; 6] {
    const A: f64 = 0.445_948_490_915_965;
    const WA: f64 = 0.223_381_589_678_011;
    const B: f64 = 0.091_576_213_509_771;
    const WB: f64 = 0.109_951_743_655_322;
    let p = |a: f64, w: f64| {
        let c = 1.0 - 2.0 * a;
        [
            TriPoint { bary: [c, a, a], weight: w },
            TriPoint { bary: [a, c, a], weight: w },
            TriPoint { bary: [a, a, c], weight: w },
        ]
    };
    let [a0, a1, a2] = p(A, WA);
    let [b0, b1, b2] = p(B, WB);
    [a0, a1, a2, b0, b1, b2]
}

/// Three-point Gauss–Legendre rule on [0, 1] as (position, weight), exact to degree 5.
pub fn segment_gauss3() -> [(f64, f64); 3] {
    let r = (0.6f64).sqrt() / 2.0;
    [(0.5 - r, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + r, 5.0 / 18.0)]
}
