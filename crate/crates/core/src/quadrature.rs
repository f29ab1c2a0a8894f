//! Fixed Gauss-Legendre and adaptive Gauss-Kronrod rules.

// Published tables, kept at their printed precision.
#![allow(clippy::excessive_precision)]

const GL16_NODES: [f64; 8] = [
    0.095_012_509_837_637_440_185,
    0.281_603_550_779_258_913_230,
    0.458_016_777_657_227_386_342,
    0.617_876_244_402_643_748_447,
    0.755_404_408_355_003_033_895,
    0.865_631_202_387_831_743_880,
    0.944_575_023_073_232_576_078,
    0.989_400_934_991_649_932_596,
];

const GL16_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_496_285,
    0.182_603_415_044_923_588_867,
    0.169_156_519_395_002_538_189,
    0.149_595_988_816_576_732_082,
    0.124_628_971_255_533_872_052,
    0.095_158_511_682_492_784_810,
    0.062_253_523_938_647_892_863,
    0.027_152_459_411_754_094_852,
];

/// 16-point Gauss-Legendre nodes and weights on (-1, 1).
pub fn gauss_legendre_16() -> impl Iterator<Item = (f64, f64)> {
    GL16_NODES
        .iter()
        .zip(GL16_WEIGHTS.iter())
        .flat_map(|(&x, &w)| [(-x, w), (x, w)])
}

const GK15_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_207,
    0.949_107_912_342_758_524_526,
    0.864_864_423_359_769_072_790,
    0.741_531_185_599_394_439_864,
    0.586_087_235_467_691_130_294,
    0.405_845_151_377_397_166_907,
    0.207_784_955_007_898_467_601,
    0.0,
];

const GK15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224_964,
    0.063_092_092_629_978_553_291,
    0.104_790_010_322_250_183_840,
    0.140_653_259_715_525_918_745,
    0.169_004_726_639_267_902_827,
    0.190_350_578_064_785_409_913,
    0.204_432_940_075_298_892_414,
    0.209_482_141_084_727_828_013,
];

// Gauss-7 weights at the odd-indexed Kronrod nodes.
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_693_271,
    0.279_705_391_489_276_667_901,
    0.381_830_050_505_118_944_950,
    0.417_959_183_673_469_387_755,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK15_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK15_NODES[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += GK15_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive bisection on `[a, b]` until each piece's Kronrod/Gauss
/// discrepancy is below its share of `tol`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol || depth >= 40 || (b - a).abs() < 1e-14 {
            return val;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth + 1) + recurse(f, m, b, 0.5 * tol, depth + 1)
    }
    recurse(&f, a, b, tol, 0)
}

/// Adaptive integral over consecutive pieces `[p_0, p_1], [p_1, p_2], ...`.
pub fn integrate_piecewise<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: f64) -> f64 {
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| integrate_adaptive(&f, w[0], w[1], tol / pieces))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_to_degree_31() {
        let total: f64 = gauss_legendre_16().map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-14);
        for k in [2, 10, 30] {
            let q: f64 = gauss_legendre_16().map(|(x, w)| w * x.powi(k)).sum();
            assert!((q - 2.0 / (k as f64 + 1.0)).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn adaptive_reference_integrals() {
        let v = integrate_adaptive(|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (1.0f64.exp() - 1.0)).abs() < 1e-13);
        let v = integrate_adaptive(|x: f64| x.abs().sqrt(), -1.0, 1.0, 1e-10);
        assert!((v - 4.0 / 3.0).abs() < 1e-9);
        let v = integrate_piecewise(|x: f64| (x - 1.0).abs(), &[0.0, 1.0, 3.0], 1e-12);
        assert!((v - 2.5).abs() < 1e-13);
    }
}
