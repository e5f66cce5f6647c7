//! Engine formulas and summary statistics over the engine and emission tables.

// Negated comparisons below also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;

use crate::corpus::{Dataset, EmissionPattern, EnginePattern};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("speed must be > 0 rpm, got {0}")]
    NonPositiveSpeed(f64),
    #[error("torque must be >= 0 N·m, got {0}")]
    NegativeTorque(f64),
    #[error("brake power must be > 0 kW, got {0}")]
    ZeroBrakePower(f64),
    #[error("fuel flow must be >= 0 kg/h, got {0}")]
    NegativeFuelFlow(f64),
    #[error("no B0 rows to compute blend deltas against")]
    NoBaseline,
}

/// Brake power in kW: `2 pi n T / 60000` for speed `n` in rpm and torque `T` in N·m.
pub fn brake_power(speed_rpm: f64, torque_nm: f64) -> Result<f64, MetricsError> {
    if !(speed_rpm > 0.0) {
        return Err(MetricsError::NonPositiveSpeed(speed_rpm));
    }
    if !(torque_nm >= 0.0) {
        return Err(MetricsError::NegativeTorque(torque_nm));
    }
    Ok(2.0 * std::f64::consts::PI * speed_rpm * torque_nm / (60.0 * 1000.0))
}

/// Brake specific fuel consumption in kg/kWh.
pub fn bsfc(fuel_flow_kg_h: f64, brake_power_kw: f64) -> Result<f64, MetricsError> {
    if !(brake_power_kw > 0.0) {
        return Err(MetricsError::ZeroBrakePower(brake_power_kw));
    }
    if !(fuel_flow_kg_h >= 0.0) {
        return Err(MetricsError::NegativeFuelFlow(fuel_flow_kg_h));
    }
    Ok(fuel_flow_kg_h / brake_power_kw)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn pct_delta(value: f64, baseline: f64) -> f64 {
    round2(100.0 * (value - baseline) / baseline)
}

/// A maximum and the row that attains it (1-based, first in table order on ties).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub value: f64,
    pub speed_rpm: f64,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlendSummary {
    pub blend_pct: f64,
    pub rows: usize,
    pub max_power_kw: Peak,
    pub max_torque_nm: Peak,
}

/// Percentage change of a blend's maxima relative to B0, rounded to 2 decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlendDelta {
    pub blend_pct: f64,
    pub max_power_pct: f64,
    pub max_torque_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineSummary {
    pub rows: usize,
    pub max_power_kw: Peak,
    pub max_torque_nm: Peak,
    pub blends: Vec<BlendSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas_vs_b0: Option<Vec<BlendDelta>>,
}

impl EngineSummary {
    pub fn blend(&self, blend_pct: f64) -> Option<&BlendSummary> {
        self.blends.iter().find(|b| b.blend_pct == blend_pct)
    }
}

fn peak<'a>(
    rows: impl Iterator<Item = (usize, &'a EnginePattern)>,
    value: impl Fn(&EnginePattern) -> f64,
) -> Peak {
    let mut best: Option<Peak> = None;
    for (row, p) in rows {
        let v = value(p);
        if best.is_none_or(|b| v > b.value) {
            best = Some(Peak {
                value: v,
                speed_rpm: p.speed_rpm,
                row,
            });
        }
    }
    best.expect("datasets are non-empty")
}

/// Exact maxima per blend and overall; deltas against B0 when `with_deltas` is set.
pub fn summarize(
    data: &Dataset<EnginePattern>,
    with_deltas: bool,
) -> Result<EngineSummary, MetricsError> {
    let indexed = || data.patterns().iter().enumerate().map(|(i, p)| (i + 1, p));

    let mut levels: Vec<f64> = Vec::new();
    for p in data.patterns() {
        if !levels.contains(&p.biodiesel_pct) {
            levels.push(p.biodiesel_pct);
        }
    }
    levels.sort_by(f64::total_cmp);

    let blends: Vec<BlendSummary> = levels
        .iter()
        .map(|&blend| {
            let of_blend = || indexed().filter(move |(_, p)| p.biodiesel_pct == blend);
            BlendSummary {
                blend_pct: blend,
                rows: of_blend().count(),
                max_power_kw: peak(of_blend(), |p| p.power_kw),
                max_torque_nm: peak(of_blend(), |p| p.torque_nm),
            }
        })
        .collect();

    let deltas_vs_b0 = if with_deltas {
        let base = blends
            .iter()
            .find(|b| b.blend_pct == 0.0)
            .ok_or(MetricsError::NoBaseline)?;
        Some(
            blends
                .iter()
                .filter(|b| b.blend_pct != 0.0)
                .map(|b| BlendDelta {
                    blend_pct: b.blend_pct,
                    max_power_pct: pct_delta(b.max_power_kw.value, base.max_power_kw.value),
                    max_torque_pct: pct_delta(b.max_torque_nm.value, base.max_torque_nm.value),
                })
                .collect(),
        )
    } else {
        None
    };

    Ok(EngineSummary {
        rows: data.len(),
        max_power_kw: peak(indexed(), |p| p.power_kw),
        max_torque_nm: peak(indexed(), |p| p.torque_nm),
        blends,
        deltas_vs_b0,
    })
}

/// Headline figures published alongside the engine table. None of them follow
/// from the table rows; they are carried next to the computed values for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportedFigures {
    pub b0_max_torque_nm: f64,
    pub b0_max_torque_rpm: f64,
    pub b0_max_power_kw: f64,
    pub b0_max_power_kw_alt: f64,
    pub b0_max_power_rpm: f64,
    pub b20_max_power_increase_pct: f64,
    pub b20_max_torque_increase_pct: f64,
}

pub const REPORTED: ReportedFigures = ReportedFigures {
    b0_max_torque_nm: 64.2,
    b0_max_torque_rpm: 2400.0,
    b0_max_power_kw: 18.12,
    b0_max_power_kw_alt: 18.2,
    b0_max_power_rpm: 3200.0,
    b20_max_power_increase_pct: 2.7,
    b20_max_torque_increase_pct: 2.9,
};

/// Printed power against power recomputed from speed and torque for one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerCheck {
    pub row: usize,
    pub speed_rpm: f64,
    pub torque_nm: f64,
    pub printed_kw: f64,
    pub computed_kw: f64,
    /// `|computed - printed| / printed`.
    pub relative_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub rows: Vec<PowerCheck>,
    pub min_relative_diff: f64,
    pub max_relative_diff: f64,
}

pub fn power_consistency(
    data: &Dataset<EnginePattern>,
) -> Result<ConsistencyReport, MetricsError> {
    let rows = data
        .patterns()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let computed = brake_power(p.speed_rpm, p.torque_nm)?;
            let relative_diff = if p.power_kw > 0.0 {
                (computed - p.power_kw).abs() / p.power_kw
            } else {
                f64::INFINITY
            };
            Ok(PowerCheck {
                row: i + 1,
                speed_rpm: p.speed_rpm,
                torque_nm: p.torque_nm,
                printed_kw: p.power_kw,
                computed_kw: computed,
                relative_diff,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let min_relative_diff = rows.iter().map(|r| r.relative_diff).fold(f64::INFINITY, f64::min);
    let max_relative_diff = rows.iter().map(|r| r.relative_diff).fold(0.0, f64::max);
    Ok(ConsistencyReport {
        rows,
        min_relative_diff,
        max_relative_diff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionSummary {
    pub rows: usize,
    pub blends: Vec<EmissionPattern>,
    /// Highest blend (in table order from the first row) up to which HC never increases.
    pub hc_non_increasing_through_blend: f64,
    pub co_non_increasing_through_blend: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas_vs_b0: Option<Vec<EmissionDelta>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmissionDelta {
    pub blend_pct: f64,
    pub hc_pct: f64,
    pub co_pct: f64,
}

fn non_increasing_through(rows: &[EmissionPattern], value: impl Fn(&EmissionPattern) -> f64) -> f64 {
    let mut last = rows[0].blend_pct;
    for w in rows.windows(2) {
        if value(&w[1]) > value(&w[0]) {
            break;
        }
        last = w[1].blend_pct;
    }
    last
}

pub fn summarize_emissions(data: &Dataset<EmissionPattern>) -> EmissionSummary {
    let rows = data.patterns();
    let deltas_vs_b0 = rows.iter().find(|p| p.blend_pct == 0.0).map(|base| {
        rows.iter()
            .filter(|p| p.blend_pct != 0.0)
            .map(|p| EmissionDelta {
                blend_pct: p.blend_pct,
                hc_pct: pct_delta(p.hc, base.hc),
                co_pct: pct_delta(p.co, base.co),
            })
            .collect()
    });
    EmissionSummary {
        rows: rows.len(),
        blends: rows.to_vec(),
        hc_non_increasing_through_blend: non_increasing_through(rows, |p| p.hc),
        co_non_increasing_through_blend: non_increasing_through(rows, |p| p.co),
        deltas_vs_b0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_emission_dataset, load_engine_dataset, Cleaning, Provenance, Source};

    fn table1() -> Dataset<EnginePattern> {
        load_engine_dataset(&Source::Bundled, Cleaning::ComplementFill).unwrap()
    }

    #[test]
    fn brake_power_examples() {
        // 2 pi * 1200 * 48 / 60000 = 6.0318...
        assert!((brake_power(1200.0, 48.0).unwrap() - 6.031857894892402).abs() < 1e-12);
        assert!((brake_power(2400.0, 63.0).unwrap() - 15.833626974092558).abs() < 1e-12);
        assert_eq!(brake_power(1500.0, 0.0).unwrap(), 0.0);
        assert!(matches!(brake_power(0.0, 10.0), Err(MetricsError::NonPositiveSpeed(_))));
        assert!(brake_power(1000.0, -1.0).is_err());
    }

    #[test]
    fn bsfc_examples() {
        assert!((bsfc(2.0, 6.032).unwrap() - 0.331_564).abs() < 1e-6);
        assert_eq!(bsfc(0.0, 3.0).unwrap(), 0.0);
        assert!(matches!(bsfc(1.0, 0.0), Err(MetricsError::ZeroBrakePower(_))));
    }

    #[test]
    fn table1_maxima() {
        let s = summarize(&table1(), true).unwrap();
        assert_eq!(s.max_torque_nm, Peak { value: 64.0, speed_rpm: 2400.0, row: 22 });
        let b0 = s.blend(0.0).unwrap();
        assert_eq!(b0.max_power_kw, Peak { value: 17.7, speed_rpm: 3200.0, row: 6 });
        assert_eq!(b0.rows, 6);
        let b20 = s.deltas_vs_b0.as_ref().unwrap().iter().find(|d| d.blend_pct == 20.0).unwrap();
        assert_eq!(b20.max_power_pct, 1.69);
        // 58 vs 63 N·m
        assert_eq!(b20.max_torque_pct, -7.94);
    }

    #[test]
    fn ties_resolve_to_first_row() {
        // B40 row 29 and B20 row 18 both print 18.0 kW; row 18 comes first.
        let s = summarize(&table1(), false).unwrap();
        assert_eq!(s.max_power_kw.row, 18);
        assert!(s.deltas_vs_b0.is_none());
    }

    #[test]
    fn deltas_need_b0() {
        let text = "sno,full_load,biodiesel_pct,diesel_pct,speed_rpm,power_kw,torque_nm,sfc\n\
                    1,1,10,90,1200,7.0,54,0.34\n";
        let data = crate::corpus::parse_engine(text, Cleaning::Raw, Provenance::BundledTable1).unwrap();
        assert_eq!(summarize(&data, true).unwrap_err(), MetricsError::NoBaseline);
        assert!(summarize(&data, false).is_ok());
    }

    #[test]
    fn consistency_report_covers_every_row() {
        let r = power_consistency(&table1()).unwrap();
        assert_eq!(r.rows.len(), 36);
        assert!(r.min_relative_diff <= r.max_relative_diff);
        assert!(r.rows.iter().all(|c| c.relative_diff.is_finite()));
    }

    #[test]
    fn emissions_hc_falls_through_b30() {
        let s = summarize_emissions(&load_emission_dataset(&Source::Bundled).unwrap());
        assert_eq!(s.rows, 6);
        assert_eq!(s.hc_non_increasing_through_blend, 30.0);
        assert_eq!(s.co_non_increasing_through_blend, 0.0);
    }
}
