//! Analytic lumped-element model of a 1:1 single-turn on-chip transformer.
//!
//! Two operations stand in for an EM solver:
//!
//! * [`geometry_to_circuit`] maps a winding geometry to lumped circuit
//!   parameters (inductances, coupling, quality factors) with a current-sheet
//!   inductance formula, a skin-effect resistance model and a width/gap
//!   coupling heuristic.
//! * [`input_impedance`] closes the loop through the two-port: secondary
//!   loaded by `z_load` with a shunt capacitor, reflected into the primary
//!   through the mutual inductance, and a shunt capacitor at the input.
//!
//! Geometry is in µm, capacitances in fF, frequency in GHz and inductances
//! in H. All arithmetic is `f64`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permeability, H/m.
pub const MU0: f64 = 4.0e-7 * PI;

const UM: f64 = 1e-6;
const FF: f64 = 1e-15;
const GHZ: f64 = 1e9;

/// Octagonal current-sheet coefficients.
const CS_K1: f64 = 2.25;
const CS_K2: f64 = 3.55;

/// A technology node / metal option / design frequency combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnologyProfile {
    pub name: String,
    /// Metal conductivity, S/m.
    pub sigma: f64,
    /// Metal thickness, µm.
    pub t_metal: f64,
    /// Vertical primary/secondary gap, µm.
    pub h_gap: f64,
    /// Coupling ceiling in (0, 1).
    pub k_max: f64,
    /// Design frequency, GHz.
    pub freq: f64,
    /// Real load impedance, Ω.
    pub z_load: f64,
}

impl TechnologyProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::Technology {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        let positive = [
            ("sigma", self.sigma),
            ("t_metal", self.t_metal),
            ("h_gap", self.h_gap),
            ("freq", self.freq),
            ("z_load", self.z_load),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return bad(&format!("{field} must be positive and finite, got {value}"));
            }
        }
        if !(self.k_max > 0.0 && self.k_max < 1.0) {
            return bad(&format!("k_max must lie in (0, 1), got {}", self.k_max));
        }
        Ok(())
    }

    /// Angular design frequency, rad/s.
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.freq * GHZ
    }
}

/// Physical transformer parameters (µm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub d_out: f64,
    pub w_p: f64,
    pub w_s: f64,
}

impl Geometry {
    pub fn new(d_out: f64, w_p: f64, w_s: f64) -> Result<Self> {
        let g = Self { d_out, w_p, w_s };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [("d_out", self.d_out), ("w_p", self.w_p), ("w_s", self.w_s)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Geometry(format!(
                    "{field} must be positive and finite, got {value}"
                )));
            }
        }
        let w_max = self.w_p.max(self.w_s);
        if self.d_out <= 2.0 * w_max {
            return Err(Error::Geometry(format!(
                "winding does not close: d_out={} <= 2*max(w_p, w_s)={}",
                self.d_out,
                2.0 * w_max
            )));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.d_out, self.w_p, self.w_s]
    }
}

/// Lumped circuit parameters of the transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub l_p: f64,
    pub l_s: f64,
    pub k: f64,
    pub q_p: f64,
    pub q_s: f64,
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l_p > 0.0
            && self.l_s > 0.0
            && self.k > 0.0
            && self.k < 1.0
            && self.q_p > 0.0
            && self.q_s > 0.0
            && self.to_array().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("invalid circuit parameters {self:?}")))
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.l_p, self.l_s, self.k, self.q_p, self.q_s]
    }

    /// Mutual inductance `k * sqrt(l_p * l_s)`, H.
    pub fn mutual(&self) -> f64 {
        self.k * (self.l_p * self.l_s).sqrt()
    }
}

/// Shunt tuning capacitors (fF). Zero means absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningCaps {
    pub c1: f64,
    pub c2: f64,
}

/// Complex input impedance (Ω).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignImpedance {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for DesignImpedance {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

/// Inductance and quality factor of one single-turn winding of width `w`.
fn winding(d_out: f64, w: f64, tech: &TechnologyProfile) -> (f64, f64) {
    let omega = tech.omega();
    let d_avg = d_out - w;
    let fill = w / d_avg;
    let l = CS_K1 * MU0 * d_avg * UM / (1.0 + CS_K2 * fill);

    let length = PI * d_avg * UM;
    let skin = (2.0 / (omega * MU0 * tech.sigma)).sqrt();
    let t = tech.t_metal * UM;
    let skin_eff = skin * (1.0 - (-t / skin).exp());
    let r = length / (tech.sigma * w * UM * skin_eff);
    (l, omega * l / r)
}

/// Maps a geometry to lumped circuit parameters under `tech`.
pub fn geometry_to_circuit(g: &Geometry, tech: &TechnologyProfile) -> Result<CircuitParams> {
    g.validate()?;
    let (l_p, q_p) = winding(g.d_out, g.w_p, tech);
    let (l_s, q_s) = winding(g.d_out, g.w_s, tech);
    let ratio = g.w_p.min(g.w_s) / g.w_p.max(g.w_s);
    let k = tech.k_max * ratio.sqrt() * (-tech.h_gap / (0.05 * g.d_out)).exp();
    Ok(CircuitParams {
        l_p,
        l_s,
        k,
        q_p,
        q_s,
    })
}

/// `z` in parallel with a capacitor of `c_ff` femtofarads; a zero capacitor is an open.
fn shunt_cap(z: Complex64, c_ff: f64, omega: f64) -> Complex64 {
    if c_ff == 0.0 {
        z
    } else {
        (z.inv() + Complex64::new(0.0, omega * c_ff * FF)).inv()
    }
}

/// Complex input impedance of the loaded, tuned transformer.
pub fn input_impedance(
    y: &CircuitParams,
    caps: &TuningCaps,
    tech: &TechnologyProfile,
) -> DesignImpedance {
    input_impedance_complex(y, caps, tech).into()
}

pub fn input_impedance_complex(
    y: &CircuitParams,
    caps: &TuningCaps,
    tech: &TechnologyProfile,
) -> Complex64 {
    let omega = tech.omega();
    let r_p = omega * y.l_p / y.q_p;
    let r_s = omega * y.l_s / y.q_s;
    let wm = omega * y.mutual();

    let load = shunt_cap(Complex64::new(tech.z_load, 0.0), caps.c2, omega);
    let z_sec = Complex64::new(r_s, omega * y.l_s) + load;
    let z_p = Complex64::new(r_p, omega * y.l_p) + wm * wm / z_sec;
    shunt_cap(z_p, caps.c1, omega)
}
