use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{TapVector, C64};

/// FOM shortener: prefilter `w`, target `f` (delays `0..=ν`) and feedback
/// filter `b` (delays `ν+1..L−1`, absent when `ν = L−1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FomFilters {
    pub w: TapVector,
    pub f: TapVector,
    pub b: Option<TapVector>,
    pub sigma: f64,
    /// Theorem rate of `f` at `sigma`, nats/symbol.
    pub milb: f64,
    /// Rate after each accepted iterate, starting with the initialization.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Relative rate gap between the FIR prefilter and the ideal one.
    pub truncation_loss: f64,
}

impl FomFilters {
    pub fn nu(&self) -> usize {
        self.f.len() - 1
    }

    /// Accepted ascent steps taken.
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// UBM shortener: prefilter `v` and one-sided target autocorrelation
/// `g_0..g_ν` with `g_0` real.
#[derive(Debug, Clone, PartialEq)]
pub struct UbmFilters {
    pub v: TapVector,
    pub g: TapVector,
    pub milb: f64,
    /// `mean(M(1+G))`, which is −1 at the optimum.
    pub stationarity: f64,
    pub iterations: usize,
}

impl UbmFilters {
    pub fn nu(&self) -> usize {
        self.g.len() - 1
    }
}

/// HOM shortener: scaled all-pass prefilter and the split minimum-phase
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct HomFilters {
    pub w_hom: TapVector,
    pub h_f: TapVector,
    pub h_b: Option<TapVector>,
    pub h_tilde: TapVector,
    pub allpass_deviation: f64,
}

impl HomFilters {
    pub fn nu(&self) -> usize {
        self.h_f.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortenerKind {
    Fom,
    Ubm,
    Hom,
}

impl std::str::FromStr for ShortenerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fom" => Ok(ShortenerKind::Fom),
            "ubm" => Ok(ShortenerKind::Ubm),
            "hom" => Ok(ShortenerKind::Hom),
            _ => Err(Error::InvalidInput(format!("unknown shortener `{s}`"))),
        }
    }
}

impl std::fmt::Display for ShortenerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ShortenerKind::Fom => "fom",
            ShortenerKind::Ubm => "ubm",
            ShortenerKind::Hom => "hom",
        };
        f.write_str(s)
    }
}

/// Output of the design stage and input to the equalizer.
#[derive(Debug, Clone, PartialEq)]
pub enum ShortenerFilters {
    Fom(FomFilters),
    Ubm(UbmFilters),
    Hom(HomFilters),
}

impl ShortenerFilters {
    pub fn kind(&self) -> ShortenerKind {
        match self {
            ShortenerFilters::Fom(_) => ShortenerKind::Fom,
            ShortenerFilters::Ubm(_) => ShortenerKind::Ubm,
            ShortenerFilters::Hom(_) => ShortenerKind::Hom,
        }
    }

    pub fn nu(&self) -> usize {
        match self {
            ShortenerFilters::Fom(x) => x.nu(),
            ShortenerFilters::Ubm(x) => x.nu(),
            ShortenerFilters::Hom(x) => x.nu(),
        }
    }

    /// The receive prefilter (`w`, `v` or `w_hom`).
    pub fn prefilter(&self) -> &TapVector {
        match self {
            ShortenerFilters::Fom(x) => &x.w,
            ShortenerFilters::Ubm(x) => &x.v,
            ShortenerFilters::Hom(x) => &x.w_hom,
        }
    }

    pub fn milb(&self) -> Option<f64> {
        match self {
            ShortenerFilters::Fom(x) => Some(x.milb),
            ShortenerFilters::Ubm(x) => Some(x.milb),
            ShortenerFilters::Hom(_) => None,
        }
    }

    pub fn to_record(&self) -> FiltersRecord {
        let mut r = FiltersRecord { kind: self.kind(), nu: self.nu(), ..FiltersRecord::default() };
        let (w_re, w_im) = split(self.prefilter());
        r.w_re = w_re;
        r.w_im = w_im;
        r.w_origin = self.prefilter().origin();
        match self {
            ShortenerFilters::Fom(x) => {
                r.set_target(&x.f, x.b.as_ref());
                r.sigma = Some(x.sigma);
                r.milb_nats = Some(x.milb);
                r.iterations = Some(x.iterations());
                r.converged = Some(x.converged);
            }
            ShortenerFilters::Hom(x) => {
                r.set_target(&x.h_f, x.h_b.as_ref());
                r.allpass_deviation = Some(x.allpass_deviation);
            }
            ShortenerFilters::Ubm(x) => {
                let (g_re, g_im) = split(&x.g);
                r.g_re = Some(g_re);
                r.g_im = Some(g_im);
                r.milb_nats = Some(x.milb);
                r.stationarity = Some(x.stationarity);
                r.iterations = Some(x.iterations);
            }
        }
        r
    }

    pub fn from_record(r: &FiltersRecord) -> Result<Self> {
        let w = TapVector::new(join(&r.w_re, &r.w_im)?, r.w_origin)?;
        let target = |name: &str| -> Result<(TapVector, Option<TapVector>)> {
            let f_re = r.f_re.as_ref().ok_or_else(|| missing(name, "f_re"))?;
            let f = TapVector::causal(join(f_re, r.f_im.as_deref().unwrap_or(&[]))?)?;
            let b = match &r.b_re {
                Some(b_re) if !b_re.is_empty() => Some(TapVector::starting_at(
                    join(b_re, r.b_im.as_deref().unwrap_or(&[]))?,
                    r.b_first_delay.unwrap_or(f.len() as isize),
                )?),
                _ => None,
            };
            Ok((f, b))
        };
        Ok(match r.kind {
            ShortenerKind::Fom => {
                let (f, b) = target("fom")?;
                ShortenerFilters::Fom(FomFilters {
                    w,
                    f,
                    b,
                    sigma: r.sigma.ok_or_else(|| missing("fom", "sigma"))?,
                    milb: r.milb_nats.unwrap_or(f64::NAN),
                    history: Vec::new(),
                    converged: r.converged.unwrap_or(true),
                    truncation_loss: 0.0,
                })
            }
            ShortenerKind::Hom => {
                let (h_f, h_b) = target("hom")?;
                let mut tilde = h_f.taps().to_vec();
                if let Some(b) = &h_b {
                    tilde.extend_from_slice(b.taps());
                }
                ShortenerFilters::Hom(HomFilters {
                    w_hom: w,
                    h_f,
                    h_b,
                    h_tilde: TapVector::causal(tilde)?,
                    allpass_deviation: r.allpass_deviation.unwrap_or(0.0),
                })
            }
            ShortenerKind::Ubm => {
                let g_re = r.g_re.as_ref().ok_or_else(|| missing("ubm", "g_re"))?;
                let g = TapVector::causal(join(g_re, r.g_im.as_deref().unwrap_or(&[]))?)?;
                ShortenerFilters::Ubm(UbmFilters {
                    v: w,
                    g,
                    milb: r.milb_nats.unwrap_or(f64::NAN),
                    stationarity: r.stationarity.unwrap_or(f64::NAN),
                    iterations: r.iterations.unwrap_or(0),
                })
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("filter record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: FiltersRecord =
            serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("filter JSON: {e}")))?;
        Self::from_record(&r)
    }
}

fn missing(kind: &str, field: &str) -> Error {
    Error::InvalidInput(format!("{kind} filters need `{field}`"))
}

fn split(t: &TapVector) -> (Vec<f64>, Vec<f64>) {
    (t.taps().iter().map(|c| c.re).collect(), t.taps().iter().map(|c| c.im).collect())
}

fn join(re: &[f64], im: &[f64]) -> Result<Vec<C64>> {
    if !im.is_empty() && im.len() != re.len() {
        return Err(Error::InvalidInput("real and imaginary tap lists differ in length".into()));
    }
    Ok(re.iter().enumerate().map(|(i, &r)| C64::new(r, im.get(i).copied().unwrap_or(0.0))).collect())
}

/// Flat JSON form of [`ShortenerFilters`]. For UBM the `w_*` fields hold `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltersRecord {
    pub kind: ShortenerKind,
    #[serde(default)]
    pub nu: usize,
    pub w_re: Vec<f64>,
    #[serde(default)]
    pub w_im: Vec<f64>,
    #[serde(default)]
    pub w_origin: isize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_re: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_im: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_re: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_im: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_first_delay: Option<isize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_re: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_im: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milb_nats: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allpass_deviation: Option<f64>,
}

impl Default for FiltersRecord {
    fn default() -> Self {
        Self {
            kind: ShortenerKind::Fom,
            nu: 0,
            w_re: Vec::new(),
            w_im: Vec::new(),
            w_origin: 0,
            f_re: None,
            f_im: None,
            b_re: None,
            b_im: None,
            b_first_delay: None,
            g_re: None,
            g_im: None,
            sigma: None,
            milb_nats: None,
            stationarity: None,
            iterations: None,
            converged: None,
            allpass_deviation: None,
        }
    }
}

impl FiltersRecord {
    fn set_target(&mut self, f: &TapVector, b: Option<&TapVector>) {
        let (f_re, f_im) = split(f);
        self.f_re = Some(f_re);
        self.f_im = Some(f_im);
        if let Some(b) = b {
            let (b_re, b_im) = split(b);
            self.b_re = Some(b_re);
            self.b_im = Some(b_im);
            self.b_first_delay = Some(b.first_delay());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(v: &[f64], first: isize) -> TapVector {
        TapVector::starting_at(v.iter().map(|&x| C64::new(x, -x / 2.0)).collect(), first).unwrap()
    }

    #[test]
    fn json_round_trip_all_kinds() {
        let fom = ShortenerFilters::Fom(FomFilters {
            w: tv(&[0.1, 1.0, 0.2], -1),
            f: tv(&[1.0, 0.5], 0),
            b: Some(tv(&[0.3, 0.1], 2)),
            sigma: 1.0,
            milb: 1.25,
            history: Vec::new(),
            converged: true,
            truncation_loss: 0.0,
        });
        let ubm = ShortenerFilters::Ubm(UbmFilters {
            v: tv(&[0.4, 1.0], 0),
            g: TapVector::causal(vec![C64::new(2.0, 0.0), C64::new(0.3, 0.1)]).unwrap(),
            milb: 0.9,
            stationarity: -1.0,
            iterations: 5,
        });
        let hom = ShortenerFilters::Hom(HomFilters {
            w_hom: tv(&[1.0], 0),
            h_f: tv(&[1.0, 0.5], 0),
            h_b: None,
            h_tilde: tv(&[1.0, 0.5], 0),
            allpass_deviation: 0.0,
        });
        for filt in [fom, ubm, hom] {
            let json = filt.to_json();
            assert!(json.contains(&format!("\"kind\": \"{}\"", filt.kind())));
            let back = ShortenerFilters::from_json(&json).unwrap();
            assert_eq!(back.kind(), filt.kind());
            assert_eq!(back.prefilter(), filt.prefilter());
            assert_eq!(back.nu(), filt.nu());
            assert_eq!(back.milb(), filt.milb());
        }
    }

    #[test]
    fn json_rejects_incomplete() {
        assert!(ShortenerFilters::from_json(r#"{"kind":"fom","w_re":[1.0]}"#).is_err());
        assert!(ShortenerFilters::from_json(r#"{"kind":"ubm","w_re":[1.0]}"#).is_err());
        assert!(ShortenerFilters::from_json(r#"{"kind":"xyz","w_re":[1.0]}"#).is_err());
        assert!("FOM".parse::<ShortenerKind>().is_ok());
    }
}
