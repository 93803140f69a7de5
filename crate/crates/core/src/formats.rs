//! JSON and CSV artifacts exchanged between pipeline stages.
//!
//! A single document shape carries both a demand model and a rebalancing
//! plan; either part may be absent:
//!
//! ```json
//! {"k": 2, "horizon_hours": 24.0,
//!  "lambda": [{"o": 1, "d": 2, "breakpoints": [0.0, 8.0], "values": [0.5, 2.0]}],
//!  "eta": [[0.0, 0.25], [0.25, 0.0]],
//!  "rho": [{"o": 2, "d": 1, "times": [9.5]}]}
//! ```
//!
//! Station labels are 1-based everywhere. Numeric CSV cells are written in
//! scientific notation with nine significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DemandModel, PiecewiseConstantIntensity, RebalancingPlan, StationId, SystemDesign};
use crate::sizing::SizingResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityEntry {
    pub o: usize,
    pub d: usize,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub o: usize,
    pub d: usize,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub k: usize,
    pub horizon_hours: f64,
    #[serde(default)]
    pub lambda: Vec<IntensityEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub rho: Vec<PlanEntry>,
}

impl ModelDocument {
    pub fn from_model(model: &DemandModel) -> Self {
        let k = model.k();
        let lambda = model
            .active_pairs()
            .map(|(o, d, f)| IntensityEntry {
                o: o + 1,
                d: d + 1,
                breakpoints: f.breakpoints().to_vec(),
                values: f.values().to_vec(),
            })
            .collect();
        let eta = model.travel_times().chunks(k).map(<[f64]>::to_vec).collect();
        Self { k, horizon_hours: model.horizon(), lambda, eta: Some(eta), rho: Vec::new() }
    }

    pub fn from_plan(plan: &RebalancingPlan) -> Self {
        Self { k: plan.k(), horizon_hours: plan.horizon(), lambda: Vec::new(), eta: None, rho: plan_entries(plan) }
    }

    pub fn with_plan(mut self, plan: &RebalancingPlan) -> Self {
        self.rho = plan_entries(plan);
        self
    }

    fn station(&self, label: usize) -> Result<StationId> {
        StationId::new(label, self.k)
    }

    pub fn model(&self) -> Result<DemandModel> {
        let mut model = DemandModel::new(self.k, self.horizon_hours)?;
        for e in &self.lambda {
            let f = PiecewiseConstantIntensity::new(e.breakpoints.clone(), e.values.clone(), self.horizon_hours)?;
            model.set_rate(self.station(e.o)?, self.station(e.d)?, f)?;
        }
        if let Some(eta) = &self.eta {
            if eta.len() != self.k || eta.iter().any(|row| row.len() != self.k) {
                return Err(Error::InvalidInput(format!("eta must be a {0}x{0} matrix", self.k)));
            }
            for (o, row) in eta.iter().enumerate() {
                for (d, &h) in row.iter().enumerate() {
                    if o != d {
                        model.set_travel_time(StationId::from_index(o), StationId::from_index(d), h)?;
                    } else if h != 0.0 {
                        return Err(Error::InvalidInput(format!("eta[{0}][{0}] must be 0", o + 1)));
                    }
                }
            }
        }
        Ok(model)
    }

    pub fn plan(&self) -> Result<RebalancingPlan> {
        let mut plan = RebalancingPlan::empty(self.k, self.horizon_hours);
        for e in &self.rho {
            plan.set_instants(self.station(e.o)?, self.station(e.d)?, e.times.clone())?;
        }
        Ok(plan)
    }
}

fn plan_entries(plan: &RebalancingPlan) -> Vec<PlanEntry> {
    let k = plan.k();
    let mut out = Vec::new();
    for o in 0..k {
        for d in 0..k {
            let times = plan.instants(o, d);
            if !times.is_empty() {
                out.push(PlanEntry { o: o + 1, d: d + 1, times: times.to_vec() });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationEntry {
    pub id: usize,
    pub v: u32,
    pub c: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qf: Option<f64>,
}

/// Sizing output, also accepted as a bare design (without `z`, `qf`, `bound`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    pub stations: Vec<StationEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl DesignDocument {
    pub fn from_design(design: &SystemDesign) -> Self {
        let stations = design
            .stock()
            .iter()
            .zip(design.capacity())
            .enumerate()
            .map(|(i, (&v, &c))| StationEntry { id: i + 1, v, c, qf: None })
            .collect();
        Self { z: None, stations, bound: None }
    }

    pub fn design(&self) -> Result<SystemDesign> {
        let k = self.stations.len();
        let mut v = vec![None; k];
        let mut c = vec![0; k];
        for s in &self.stations {
            let i = StationId::new(s.id, k)?.index();
            if v[i].is_some() {
                return Err(Error::InvalidInput(format!("station {} listed twice", s.id)));
            }
            v[i] = Some(s.v);
            c[i] = s.c;
        }
        SystemDesign::new(v.into_iter().map(|x| x.unwrap_or_default()).collect(), c)
    }
}

impl From<&SizingResult> for DesignDocument {
    fn from(r: &SizingResult) -> Self {
        let stations =
            r.stations.iter().map(|s| StationEntry { id: s.station.label(), v: s.v, c: s.c, qf: Some(s.qf) }).collect();
        Self { z: Some(r.z), stations, bound: Some(r.bound) }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Fixed CSV number format: nine significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

/// Writes a header and rows of preformatted cells.
pub fn write_csv<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> DemandModel {
        let mut m = DemandModel::new(3, 24.0).unwrap();
        let f = PiecewiseConstantIntensity::new(vec![0.0, 8.0, 17.0], vec![0.5, 2.0, 1.0 / 3.0], 24.0).unwrap();
        m.set_rate(StationId::from_index(0), StationId::from_index(2), f).unwrap();
        m.set_travel_time(StationId::from_index(0), StationId::from_index(2), 0.1 + 0.2).unwrap();
        m
    }

    #[test]
    fn model_round_trips_through_json() {
        let m = sample_model();
        let text = serde_json::to_string(&ModelDocument::from_model(&m)).unwrap();
        let back: ModelDocument = serde_json::from_str(&text).unwrap();
        let m2 = back.model().unwrap();
        assert_eq!(m, m2);
        for t in [0.0, 7.99, 8.0, 16.5, 23.0, 24.0] {
            assert_eq!(m.rate(0, 2).eval(t).unwrap(), m2.rate(0, 2).eval(t).unwrap());
        }
    }

    #[test]
    fn plan_section_is_optional_and_round_trips() {
        let doc: ModelDocument = serde_json::from_str(r#"{"k":2,"horizon_hours":24}"#).unwrap();
        assert!(doc.plan().unwrap().is_empty());
        assert!(doc.model().unwrap().active_pairs().next().is_none());

        let mut plan = RebalancingPlan::empty(2, 24.0);
        plan.set_instants(StationId::from_index(1), StationId::from_index(0), vec![9.5, 3.0]).unwrap();
        let doc = ModelDocument::from_plan(&plan);
        assert_eq!(doc.rho, vec![PlanEntry { o: 2, d: 1, times: vec![3.0, 9.5] }]);
        assert_eq!(doc.plan().unwrap(), plan);
    }

    #[test]
    fn labels_are_one_based() {
        let doc: ModelDocument = serde_json::from_str(
            r#"{"k":2,"horizon_hours":24,"lambda":[{"o":0,"d":1,"breakpoints":[0],"values":[1]}]}"#,
        )
        .unwrap();
        assert!(matches!(doc.model(), Err(Error::InvalidStation { station: 0, k: 2 })));
    }

    #[test]
    fn design_document_accepts_bare_designs() {
        let doc: DesignDocument =
            serde_json::from_str(r#"{"stations":[{"id":2,"v":1,"c":3},{"id":1,"v":0,"c":2}]}"#).unwrap();
        let d = doc.design().unwrap();
        assert_eq!(d.stock(), &[0, 1]);
        assert_eq!(d.capacity(), &[2, 3]);
        assert_eq!(DesignDocument::from_design(&d).design().unwrap(), d);
    }

    #[test]
    fn number_format_is_fixed() {
        assert_eq!(fmt_num(0.0), "0.00000000e0");
        assert_eq!(fmt_num(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_num(24.0), "2.40000000e1");
    }
}
