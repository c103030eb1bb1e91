//! Training artifacts: loss history CSV, checkpoints and learned-term tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix6, Vector6};

use super::fit::IterationRecord;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::geom::GeneralizedCoord;
use crate::model::{HamiltonianModel, Matrix6x2};

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.into(), message: e.to_string() }
}

/// Writes `iteration,train_loss,test_loss`; missing test losses are empty.
pub fn write_loss_csv(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let err = csv_error(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["iteration", "train_loss", "test_loss"]).map_err(&err)?;
    for r in history {
        let test = r.test_loss.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([r.iteration.to_string(), r.train_loss.to_string(), test]).map_err(&err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &HamiltonianModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    model.params().write_checkpoint(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads parameters into `model`, which must have the same layout.
pub fn load_checkpoint(path: &Path, model: &mut HamiltonianModel) -> Result<()> {
    let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let store = ParamStore::read_checkpoint(BufReader::new(f))?;
    model.load_params(&store)
}

/// Learned terms at one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermSample {
    pub m_inv: Matrix6<f64>,
    pub d: Matrix6<f64>,
    pub g: Matrix6x2,
}

impl TermSample {
    pub fn eval(model: &HamiltonianModel, q: &GeneralizedCoord) -> Result<Self> {
        Ok(Self { m_inv: model.mass_inv(q)?, d: model.damping(q), g: model.gain(q) })
    }

    pub fn m_inv_diag(&self) -> Vector6<f64> {
        self.m_inv.diagonal()
    }
}

pub const TERMS_HEADER: [&str; 25] = [
    "step", "minv_11", "minv_22", "minv_33", "minv_44", "minv_55", "minv_66", "d_11", "d_22", "d_33", "d_44", "d_55",
    "d_66", "g_11", "g_12", "g_21", "g_22", "g_31", "g_32", "g_41", "g_42", "g_51", "g_52", "g_61", "g_62",
];

/// Diagonal `M⁻¹` and `D` entries and all of `g` at each configuration.
pub fn write_terms_csv(path: &Path, model: &HamiltonianModel, qs: &[GeneralizedCoord]) -> Result<Vec<TermSample>> {
    let err = csv_error(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(TERMS_HEADER).map_err(&err)?;
    let mut out = Vec::with_capacity(qs.len());
    for (k, q) in qs.iter().enumerate() {
        let t = TermSample::eval(model, q)?;
        let mut rec = vec![k.to_string()];
        rec.extend(t.m_inv.diagonal().iter().map(|x| x.to_string()));
        rec.extend(t.d.diagonal().iter().map(|x| x.to_string()));
        for i in 0..6 {
            rec.extend(t.g.row(i).iter().map(|x| x.to_string()));
        }
        w.write_record(rec).map_err(&err)?;
        out.push(t);
    }
    w.flush()?;
    Ok(out)
}
