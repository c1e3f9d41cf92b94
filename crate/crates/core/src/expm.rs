//! Matrix exponential by scaling and squaring with a diagonal Padé core.
//!
//! Degree selection and the `theta` thresholds follow Higham's 2005 variant:
//! the smallest of degrees 3, 5, 7, 9 whose threshold covers `||A||_1` is used
//! directly; otherwise `A` is scaled by `2^-s` into the degree-13 range and the
//! result squared `s` times.

use nalgebra::DMatrix;

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068e0),
];
const THETA_13: f64 = 5.371_920_351_148_152;

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17_297_280.0, 8_648_640.0, 1_995_840.0, 277_200.0, 25_200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17_643_225_600.0,
            8_821_612_800.0,
            2_075_673_600.0,
            302_702_400.0,
            30_270_240.0,
            2_162_160.0,
            110_880.0,
            3960.0,
            90.0,
            1.0,
        ],
        13 => &[
            64_764_752_532_480_000.0,
            32_382_376_266_240_000.0,
            7_771_770_303_897_600.0,
            1_187_353_796_428_800.0,
            129_060_195_264_000.0,
            10_559_470_521_600.0,
            670_442_572_800.0,
            33_522_128_640.0,
            1_323_241_920.0,
            40_840_800.0,
            960_960.0,
            16_380.0,
            182.0,
            1.0,
        ],
        _ => unreachable!("unsupported Pade degree {m}"),
    }
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `(V - U) X = (V + U)` for the Padé pair.
fn pade_quotient(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).expect("Pade denominator is nonsingular in its theta range")
}

fn pade_low(a: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let b = pade_coefficients(m);
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    // even powers A^0, A^2, A^4, ...
    let mut powers = vec![ident.clone(), a2.clone()];
    while powers.len() <= m / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for (k, pw) in powers.iter().enumerate() {
        if 2 * k + 1 <= m {
            u_inner += pw * b[2 * k + 1];
        }
        if 2 * k <= m {
            v += pw * b[2 * k];
        }
    }
    pade_quotient(a * u_inner, v)
}

fn pade_13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let b = pade_coefficients(13);
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_tail = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_tail + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v_tail = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_tail + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    pade_quotient(u, v)
}

/// `exp(A)` for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm1(a);
    for (m, theta) in THETA {
        if norm <= theta {
            return pade_low(a, m);
        }
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);
    let mut x = pade_13(&scaled);
    for _ in 0..s {
        x = &x * &x;
    }
    x
}
