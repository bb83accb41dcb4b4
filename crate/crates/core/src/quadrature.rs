//! Composite Gauss–Legendre quadrature.

const NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Nodes and weights of an 8-point rule on each of `panels` equal panels of `[a, b]`.
pub(crate) fn rule(a: f64, b: f64, panels: usize) -> impl Iterator<Item = (f64, f64)> {
    let h = (b - a) / panels as f64;
    (0..panels).flat_map(move |p| {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        (0..8).map(move |k| {
            let (x, w) = (NODES[k / 2], WEIGHTS[k / 2]);
            let s = if k % 2 == 0 { -x } else { x };
            (mid + s * half, w * half)
        })
    })
}

pub(crate) fn integrate(a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    rule(a, b, panels).map(|(x, w)| w * f(x)).sum()
}
