//! Individual uncertainty intervals at a given development sample size
//! (Option A) and the sample size needed for target interval widths
//! (Option B).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::coremodel::CoreModel;
use crate::error::{Error, Result};
use crate::fisherinfo::{check_n, UnitInformation};
use crate::instability::{summarize, Summary};
use crate::numkit::{bisect_root, invlogit, logit, normal_quantile, Z_975};
use crate::population::Dataset;

/// Wald interval on the logit scale, back-transformed to risks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wald {
    z: f64,
}

impl Default for Wald {
    fn default() -> Self {
        Wald { z: Z_975 }
    }
}

impl Wald {
    /// Two-sided interval with coverage `level`.
    pub fn with_level(level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!("interval level {level} not in (0, 1)")));
        }
        Ok(Wald { z: normal_quantile(0.5 + level / 2.0)? })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn interval(&self, p: f64, v: f64) -> Result<(f64, f64)> {
        check_risk(p)?;
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("variance must be non-negative, got {v}")));
        }
        if v == 0.0 {
            return Ok((p, p));
        }
        let centre = logit(p);
        let half = self.z * v.sqrt();
        Ok((invlogit(centre - half), invlogit(centre + half)))
    }

    pub fn width(&self, p: f64, v: f64) -> Result<f64> {
        let (lo, hi) = self.interval(p, v)?;
        Ok(hi - lo)
    }

    /// The logit-scale variance whose interval at `p` is exactly `max_width` wide.
    pub fn width_to_variance(&self, p: f64, max_width: f64) -> Result<f64> {
        check_risk(p)?;
        if !(max_width > 0.0) {
            return Err(Error::Domain(format!("target width must be positive, got {max_width}")));
        }
        if max_width >= 1.0 {
            return Err(Error::Unachievable { risk: p, width: max_width, supremum: 1.0 });
        }
        let width = |v: f64| self.width(p, v).unwrap_or(f64::NAN);
        let mut hi = 1.0;
        while width(hi) < max_width {
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::Unachievable { risk: p, width: max_width, supremum: width(hi) });
            }
        }
        bisect_root(|v| width(v) - max_width, 0.0, hi, 1e-15, 400)
    }
}

fn check_risk(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("risk {p} not in (0, 1)")));
    }
    Ok(())
}

/// 95% interval `invlogit(logit p ± 1.96·√v)`.
pub fn uncertainty_interval(p: f64, v: f64) -> Result<(f64, f64)> {
    Wald::default().interval(p, v)
}

/// 95%-interval variance target for a width at risk `p`.
pub fn width_to_variance(p: f64, max_width: f64) -> Result<f64> {
    Wald::default().width_to_variance(p, max_width)
}

/// One individual's anticipated interval at a given sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecord {
    pub row_index: usize,
    pub true_risk: f64,
    pub var_logit: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
}

/// True risks and `x̃ I⁻¹ x̃'` per row; everything else scales with `1/n`.
#[derive(Debug, Clone)]
pub struct PrecisionBasis {
    pub risks: Vec<f64>,
    pub leverages: Vec<f64>,
}

impl PrecisionBasis {
    pub fn new(m: &CoreModel, ds: &Dataset, info: &UnitInformation) -> Result<Self> {
        if info.dim() != m.p() + 1 {
            return Err(Error::DimensionMismatch { expected: m.p() + 1, got: info.dim() });
        }
        let design = m.design(ds)?;
        let inv = info.inverse()?;
        let risks = m.risks(&design);
        let leverages = design.rows().map(|x| inv.leverage(x)).collect();
        Ok(PrecisionBasis { risks, leverages })
    }

    pub fn len(&self) -> usize {
        self.risks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risks.is_empty()
    }

    pub fn option_a(&self, n: f64, wald: &Wald) -> Result<OptionA> {
        check_n(n)?;
        let records = self
            .risks
            .iter()
            .zip(&self.leverages)
            .enumerate()
            .map(|(row_index, (&p, &q))| {
                let v = q / n;
                let (lower, upper) = wald.interval(p, v)?;
                Ok(PrecisionRecord { row_index, true_risk: p, var_logit: v, lower, upper, width: upper - lower })
            })
            .collect::<Result<Vec<_>>>()?;
        let widths: Vec<f64> = records.iter().map(|r| r.width).collect();
        Ok(OptionA { n, width_summary: summarize(&widths)?, records })
    }

    pub fn option_b(&self, bands: &[BandTarget]) -> Result<OptionB> {
        self.option_b_within(bands, None)
    }

    /// Option B restricted to rows whose risk lies within `max_distance`
    /// of their nearest band; other rows are left untargeted.
    pub fn option_b_within(&self, bands: &[BandTarget], max_distance: Option<f64>) -> Result<OptionB> {
        check_bands(bands)?;
        if let Some(d) = max_distance {
            if !(d >= 0.0) {
                return Err(Error::Domain(format!("band distance must be non-negative, got {d}")));
            }
        }
        let mut per_row_n = Vec::with_capacity(self.len());
        let mut band_of_row = Vec::with_capacity(self.len());
        for (&p, &q) in self.risks.iter().zip(&self.leverages) {
            let b = nearest_band(bands, p);
            if max_distance.is_some_and(|d| (p - bands[b].risk).abs() > d) {
                per_row_n.push(None);
                band_of_row.push(None);
            } else {
                per_row_n.push(Some((q / bands[b].max_var).ceil() as u64));
                band_of_row.push(Some(b));
            }
        }
        let mut per_band: Vec<BandRequirement> = (0..bands.len())
            .map(|band| BandRequirement { band, rows: 0, required_n: 0 })
            .collect();
        for (b, n) in band_of_row.iter().zip(&per_row_n) {
            if let (Some(b), Some(n)) = (b, n) {
                per_band[*b].rows += 1;
                per_band[*b].required_n = per_band[*b].required_n.max(*n);
            }
        }
        let required_n = per_row_n.iter().flatten().copied().max().ok_or(Error::EmptyInput)?;
        Ok(OptionB { per_row_n, band_of_row, required_n, per_band })
    }
}

/// Option A output at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionA {
    pub n: f64,
    pub records: Vec<PrecisionRecord>,
    pub width_summary: Summary,
}

/// Anticipated intervals for every row of `ds` at development size `n`.
pub fn option_a(m: &CoreModel, ds: &Dataset, info: &UnitInformation, n: f64) -> Result<OptionA> {
    PrecisionBasis::new(m, ds, info)?.option_a(n, &Wald::default())
}

/// Maximum logit variance allowed near a risk grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandTarget {
    pub risk: f64,
    pub max_width: f64,
    pub max_var: f64,
}

impl BandTarget {
    pub fn new(risk: f64, max_width: f64) -> Result<Self> {
        Self::with_wald(risk, max_width, &Wald::default())
    }

    pub fn with_wald(risk: f64, max_width: f64, wald: &Wald) -> Result<Self> {
        let max_var = wald.width_to_variance(risk, max_width)?;
        Ok(BandTarget { risk, max_width, max_var })
    }

    /// Band stated directly as a variance target.
    pub fn from_variance(risk: f64, max_var: f64) -> Result<Self> {
        if !(max_var > 0.0) {
            return Err(Error::Domain(format!("variance target must be positive, got {max_var}")));
        }
        let max_width = Wald::default().width(risk, max_var)?;
        Ok(BandTarget { risk, max_width, max_var })
    }
}

fn check_bands(bands: &[BandTarget]) -> Result<()> {
    if bands.is_empty() {
        return Err(Error::EmptyInput);
    }
    for w in bands.windows(2) {
        if !(w[1].risk > w[0].risk) {
            return Err(Error::Domain("band risks must be strictly increasing".into()));
        }
    }
    if let Some(b) = bands.iter().find(|b| !(b.max_var > 0.0)) {
        return Err(Error::Domain(format!("band at {} has a non-positive variance", b.risk)));
    }
    Ok(())
}

/// Index of the band whose grid risk is closest to `p`; ties go to the lower band.
pub fn nearest_band(bands: &[BandTarget], p: f64) -> usize {
    let above = bands.partition_point(|b| b.risk < p);
    if above == 0 {
        return 0;
    }
    if above == bands.len() {
        return bands.len() - 1;
    }
    let below = above - 1;
    if p - bands[below].risk <= bands[above].risk - p {
        below
    } else {
        above
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandRequirement {
    pub band: usize,
    pub rows: usize,
    pub required_n: u64,
}

/// Option B output.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionB {
    /// `None` for rows outside every band's reach.
    pub per_row_n: Vec<Option<u64>>,
    pub band_of_row: Vec<Option<usize>>,
    /// Largest per-row requirement.
    pub required_n: u64,
    pub per_band: Vec<BandRequirement>,
}

impl OptionB {
    /// Largest requirement among rows selected by `keep`.
    pub fn required_n_where(&self, mut keep: impl FnMut(usize) -> bool) -> Option<u64> {
        self.per_row_n.iter().enumerate().filter(|(i, _)| keep(*i)).filter_map(|(_, &n)| n).max()
    }
}

/// Required sample size so every row meets its band's variance target.
pub fn option_b(
    m: &CoreModel,
    ds: &Dataset,
    info: &UnitInformation,
    bands: &[BandTarget],
) -> Result<OptionB> {
    PrecisionBasis::new(m, ds, info)?.option_b(bands)
}

const PRECISION_HEADER: [&str; 6] = ["row_index", "true_risk", "var_logit", "lower", "upper", "width"];

pub fn write_precision_csv<W: Write>(records: &[PrecisionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PRECISION_HEADER)?;
    for r in records {
        w.write_record(&[
            r.row_index.to_string(),
            format!("{}", r.true_risk),
            format!("{}", r.var_logit),
            format!("{}", r.lower),
            format!("{}", r.upper),
            format!("{}", r.width),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_precision_csv<R: Read>(input: R) -> Result<Vec<PrecisionRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(PRECISION_HEADER) {
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            message: format!("expected {}", PRECISION_HEADER.join(",")),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
