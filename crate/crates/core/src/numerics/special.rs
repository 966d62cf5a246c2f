//! Scalar special functions shared by losses and targets.

/// Indices are clamped to this magnitude before exponentiation.
pub const INDEX_CLAMP: f64 = 700.0;
/// Floor applied to arguments of `ln` in likelihoods.
pub const LOG_FLOOR: f64 = 1e-300;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn clamp_index(u: f64) -> f64 {
    u.clamp(-INDEX_CLAMP, INDEX_CLAMP)
}

/// Logistic link `1 / (1 + e^{-u})`, evaluated without overflow.
pub fn logistic(u: f64) -> f64 {
    let u = clamp_index(u);
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^u)`
pub fn softplus(u: f64) -> f64 {
    let u = clamp_index(u);
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Standard normal density.
pub fn norm_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal distribution function, via the complementary error
/// function so that both tails keep full relative precision.
pub fn norm_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

/// `1 − Φ(u)` without cancellation.
pub fn norm_sf(u: f64) -> f64 {
    0.5 * erfc(u / std::f64::consts::SQRT_2)
}

/// `φ(u) / (1 − Φ(u))`, the hazard of the standard normal.
pub fn normal_hazard(u: f64) -> f64 {
    let sf = norm_sf(u);
    if sf > 1e-300 {
        norm_pdf(u) / sf
    } else {
        // Mills-ratio asymptote for the far upper tail.
        u + 1.0 / u
    }
}

/// Complementary error function, W. J. Cody's rational Chebyshev
/// approximations (relative error near machine precision on all three
/// ranges).
pub fn erfc(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6,
        113.864_154_151_050_16,
        377.485_237_685_302_02,
        3_209.377_589_138_469_5,
        0.185_777_706_184_603_15,
    ];
    const B: [f64; 4] = [
        23.601_290_952_344_122,
        244.024_637_934_444_17,
        1_282.616_526_077_372_3,
        2_844.236_833_439_170_6,
    ];
    const C: [f64; 9] = [
        0.564_188_496_988_670_09,
        8.883_149_794_388_376,
        66.119_190_637_141_63,
        298.635_138_197_400_13,
        881.952_221_241_769_1,
        1_712.047_612_634_070_6,
        2_051.078_377_826_071_5,
        1_230.339_354_797_997_2,
        2.153_115_354_744_038_5e-8,
    ];
    const D: [f64; 8] = [
        15.744_926_110_709_835,
        117.693_950_891_312_5,
        537.181_101_862_009_9,
        1_621.389_574_566_690_2,
        3_290.799_235_733_459_6,
        4_362.619_090_143_247,
        3_439.367_674_143_721_6,
        1_230.339_354_803_749_4,
    ];
    const P: [f64; 6] = [
        0.305_326_634_961_232_34,
        0.360_344_899_949_804_44,
        0.125_781_726_111_229_25,
        0.016_083_785_148_742_277,
        6.587_491_615_298_378e-4,
        0.016_315_387_137_302_098,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822,
        1.872_952_849_923_467_3,
        0.527_905_102_951_428_4,
        0.060_518_341_312_441_32,
        0.002_335_204_976_268_691_8,
    ];
    const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

    let y = x.abs();
    if y <= 0.468_75 {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        return 1.0 - x * (num + A[3]) / (den + B[3]);
    }
    let tail = if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y >= 26.543 {
        0.0
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let r = ysq * (num + P[4]) / (den + Q[4]);
        let r = (FRAC_1_SQRT_PI - r) / y;
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    };
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_symmetric_and_saturates() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(2.0) + logistic(-2.0) - 1.0).abs() < 1e-15);
        assert_eq!(logistic(1e6), 1.0);
        assert_eq!(logistic(-1e6), (-700.0f64).exp() / (1.0 + (-700.0f64).exp()));
    }

    #[test]
    fn normal_reference_values() {
        // Φ(1.96) and Φ(-3), 30-digit reference values rounded to f64.
        assert!((norm_cdf(1.96) - 0.975_002_104_851_779_6).abs() < 1e-15);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_094_5).abs() < 1e-17);
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_pdf(0.0) - INV_SQRT_2PI).abs() < 1e-16);
    }

    #[test]
    fn cdf_absolute_error_below_1e12() {
        // Reference values computed at 40 significant digits.
        let table = [
            (-8.0, 6.220_960_574_271_784e-16),
            (-5.0, 2.866_515_718_791_939e-7),
            (-3.3, 0.000_483_424_142_383_777_5),
            (-2.0, 0.022_750_131_948_179_207),
            (-1.2, 0.115_069_670_221_708_28),
            (-0.7, 0.241_963_652_223_073_03),
            (-0.3, 0.382_088_577_811_047_37),
            (0.1, 0.539_827_837_277_029),
            (0.45, 0.673_644_779_712_08),
            (0.5, 0.691_462_461_274_013_1),
            (1.0, 0.841_344_746_068_542_9),
            (2.5, 0.993_790_334_674_223_9),
            (3.9, 0.999_951_903_655_982_4),
            (4.1, 0.999_979_342_493_087_5),
            (6.0, 0.999_999_999_013_412_4),
            (9.0, 1.0),
        ];
        for (x, want) in table {
            let got = norm_cdf(x);
            assert!((got - want).abs() < 1e-12, "Φ({x}) = {got}, want {want}");
            if x < 0.0 {
                assert!((got - want).abs() <= 1e-13 * want, "relative tail error at {x}");
            }
        }
    }

    #[test]
    fn quantiles() {
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((norm_quantile(0.75) - 0.674_489_750_196_081_7).abs() < 1e-9);
    }

    #[test]
    fn hazard_at_zero() {
        assert!((normal_hazard(0.0) - 2.0 * INV_SQRT_2PI).abs() < 1e-14);
    }
}
