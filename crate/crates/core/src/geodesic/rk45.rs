//! Dormand–Prince 5(4) embedded Runge–Kutta stepper for autonomous systems.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    pub atol: f64,
    pub rtol: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    pub h_min: f64,
}

impl StepControl {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Self {
            atol,
            rtol,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 5.0,
            h_min: 1e-14,
        }
    }
}

/// Result of one attempted step.
pub struct Trial<const N: usize> {
    pub y: [f64; N],
    /// Derivative at the new point (first stage of the next step).
    pub dy: [f64; N],
    /// Scaled RMS error estimate; the step is acceptable when `<= 1`.
    pub error: f64,
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

/// Takes a single Dormand–Prince step of size `h` from `y` with derivative `k1`.
pub fn try_step<const N: usize, F>(f: &F, y: &[f64; N], k1: &[f64; N], h: f64, control: &StepControl) -> Trial<N>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k2 = f(&axpy(y, h, &[(A21, k1)]));
    let k3 = f(&axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = f(&axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(&axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(&axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let y_new = axpy(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = f(&y_new);

    let mut sum = 0.0;
    for i in 0..N {
        let err = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let scale = control.atol + control.rtol * y[i].abs().max(y_new[i].abs());
        sum += (err / scale).powi(2);
    }
    let error = (sum / N as f64).sqrt();
    let error = if error.is_finite() && y_new.iter().all(|v| v.is_finite()) {
        error
    } else {
        f64::INFINITY
    };
    Trial { y: y_new, dy: k7, error }
}

/// Step-size factor proposed after a trial with the given error norm.
pub fn step_factor(error: f64, control: &StepControl) -> f64 {
    if error == 0.0 {
        return control.max_factor;
    }
    if !error.is_finite() {
        return control.min_factor;
    }
    (control.safety * error.powf(-0.2)).clamp(control.min_factor, control.max_factor)
}
