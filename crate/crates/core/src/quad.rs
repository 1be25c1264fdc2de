//! One-dimensional quadrature: a nested Gauss–Kronrod 7/15 rule with
//! adaptive bisection, fixed Gauss–Legendre tables for product rules, and
//! small helpers for semi-infinite and power-singular radial integrals.

/// Kronrod abscissae on [0,1] side of [-1,1] (symmetric).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_2,
    0.949_107_912_342_758_524_5,
    0.864_864_423_359_769_072_8,
    0.741_531_185_599_394_439_9,
    0.586_087_235_467_691_130_3,
    0.405_845_151_377_397_166_9,
    0.207_784_955_007_898_467_6,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_964,
    0.063_092_092_629_978_553_291,
    0.104_790_010_322_250_183_84,
    0.140_653_259_715_525_918_75,
    0.169_004_726_639_267_902_83,
    0.190_350_578_064_785_409_91,
    0.204_432_940_075_298_892_69,
    0.209_482_141_084_727_828_12,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_27,
    0.279_705_391_489_276_667_9,
    0.381_830_050_505_118_944_95,
    0.417_959_183_673_469_387_76,
];

/// Gauss–Legendre 8 on [-1,1]: (abscissa, weight), positive half.
const GL8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_805, 0.362_683_783_378_361_983),
    (0.525_532_409_916_328_986, 0.313_706_645_877_887_287),
    (0.796_666_477_413_626_740, 0.222_381_034_453_374_471),
    (0.960_289_856_497_536_232, 0.101_228_536_290_376_259),
];

/// Gauss–Legendre 16 on [-1,1], positive half.
const GL16: [(f64, f64); 8] = [
    (0.095_012_509_837_637_440_2, 0.189_450_610_455_068_496_3),
    (0.281_603_550_779_258_913_2, 0.182_603_415_044_923_588_9),
    (0.458_016_777_657_227_386_3, 0.169_156_519_395_002_538_2),
    (0.617_876_244_402_643_748_4, 0.149_595_988_816_576_732_1),
    (0.755_404_408_355_003_033_9, 0.124_628_971_255_533_872_1),
    (0.865_631_202_387_831_743_9, 0.095_158_511_682_492_784_8),
    (0.944_575_023_073_232_576_1, 0.062_253_523_938_647_892_9),
    (0.989_400_934_991_649_932_6, 0.027_152_459_411_754_094_9),
];

/// Nodes and weights of an n-point Gauss rule mapped to [a, b].
pub fn gauss_nodes(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let table: &[(f64, f64)] = match n {
        8 => &GL8,
        16 => &GL16,
        _ => panic!("unsupported Gauss order {n}"),
    };
    let mut out = Vec::with_capacity(n);
    for &(x, w) in table {
        out.push((mid - half * x, half * w));
        out.push((mid + half * x, half * w));
    }
    out.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    out
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub err: f64,
    pub evals: usize,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut res_g = 0.0;
    let mut res_k = 0.0;
    let mut res_abs = 0.0;
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        if x == 0.0 {
            let fc = f(mid);
            res_k += wk * fc;
            res_abs += wk * fc.abs();
            res_g += WG[3] * fc;
        } else {
            let f1 = f(mid - half * x);
            let f2 = f(mid + half * x);
            res_k += wk * (f1 + f2);
            res_abs += wk * (f1.abs() + f2.abs());
            // odd Kronrod indices coincide with the embedded Gauss rule
            if i % 2 == 1 {
                res_g += WG[i / 2] * (f1 + f2);
            }
        }
    }
    let value = res_k * half;
    let err = ((res_k - res_g) * half).abs();
    (value, err, res_abs * half.abs())
}

/// Adaptive bisection with the 7/15 pair. Stops when the summed error
/// estimate is below `abs_tol + rel_tol * |integral|` or the interval
/// budget runs out (the error estimate is still reported).
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    const MAX_INTERVALS: usize = 4000;
    if a == b {
        return QuadResult {
            value: 0.0,
            err: 0.0,
            evals: 0,
        };
    }
    let mut evals = 15;
    let (v, e, _) = gk15(&mut f, a, b);
    // (neg_err, a, b, value) — process worst interval first
    let mut heap: Vec<(f64, f64, f64, f64)> = vec![(e, a, b, v)];
    let mut total_v = v;
    let mut total_e = e;
    while total_e > abs_tol.max(rel_tol * total_v.abs()) && heap.len() < MAX_INTERVALS {
        // pop the interval with the largest error
        let mut worst = 0;
        for i in 1..heap.len() {
            if heap[i].0 > heap[worst].0 {
                worst = i;
            }
        }
        let (we, wa, wb, wv) = heap.swap_remove(worst);
        let m = 0.5 * (wa + wb);
        if m <= wa || m >= wb {
            // interval at floating-point resolution; keep as is
            heap.push((0.0, wa, wb, wv));
            total_e -= we;
            continue;
        }
        let (v1, e1, _) = gk15(&mut f, wa, m);
        let (v2, e2, _) = gk15(&mut f, m, wb);
        evals += 30;
        total_v += v1 + v2 - wv;
        total_e += e1 + e2 - we;
        heap.push((e1, wa, m, v1));
        heap.push((e2, m, wb, v2));
    }
    QuadResult {
        value: total_v,
        err: total_e,
        evals,
    }
}

/// Integral over [0, inf) of an integrand `f` with integrable decay.
/// Splits at `split` and maps the tail through r = split / u.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    split: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    let head = adaptive(|r| f(r), 0.0, split, 0.5 * abs_tol, 0.5 * rel_tol);
    let tail = adaptive(
        |u| {
            if u <= 0.0 {
                0.0
            } else {
                let r = split / u;
                f(r) * split / (u * u)
            }
        },
        0.0,
        1.0,
        0.5 * abs_tol,
        0.5 * rel_tol,
    );
    QuadResult {
        value: head.value + tail.value,
        err: head.err + tail.err,
        evals: head.evals + tail.evals,
    }
}

/// Integral over [0, upper] of r^a * g(r) with g smooth and a > -1.
/// The substitution r = w^m lifts the endpoint power so the nested rule
/// converges at full order.
pub fn integrate_power_endpoint<G: Fn(f64) -> f64>(
    a: f64,
    g: G,
    upper: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    assert!(a > -1.0, "non-integrable endpoint power {a}");
    let m = (2.0 / (a + 1.0)).ceil().max(1.0);
    let w_upper = upper.powf(1.0 / m);
    adaptive(
        |w| {
            if w <= 0.0 {
                0.0
            } else {
                let r = w.powf(m);
                m * w.powf(m * (a + 1.0) - 1.0) * g(r)
            }
        },
        0.0,
        w_upper,
        abs_tol,
        rel_tol,
    )
}

/// Running mean / standard-error accumulator for Monte Carlo sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct McAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl McAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &McAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let delta = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n as f64 - 1.0)
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}
