use serde::{Deserialize, Serialize};

use crate::data::MnistSet;
use crate::error::Result;
use crate::network::{MnistArch, NetworkSpec};
use crate::reorder::PatchReorderConfig;
use crate::train::{evaluate, train, TrainConfig};

/// One trained model of a sweep: reordering after conv `placement` (none
/// for the baseline) with the given pyramid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub placement: Option<usize>,
    pub config: Option<PatchReorderConfig>,
}

impl AblationCell {
    pub fn spec(&self, arch: MnistArch) -> NetworkSpec {
        match (self.placement, &self.config) {
            (Some(at), Some(cfg)) => NetworkSpec::mnist(arch, &[(at, cfg.clone())]),
            _ => NetworkSpec::mnist(arch, &[]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub eval_error: Option<f64>,
    pub final_loss: Option<f64>,
    /// `ok`, or why the cell failed.
    pub status: String,
}

pub const ABLATION_HEADER: &str = "placement,levels,grids,norm,eval_error,final_loss,status";

impl AblationRow {
    pub fn csv(&self) -> String {
        let placement = self
            .cell
            .placement
            .map(|p| format!("conv{p}"))
            .unwrap_or_else(|| "none".into());
        let (levels, grids, norm) = match &self.cell.config {
            Some(c) => (
                c.grids.len().to_string(),
                c.grids.iter().map(|(r, c)| format!("{r}x{c}")).collect::<Vec<_>>().join(" "),
                format!("{:?}", c.norm).to_lowercase(),
            ),
            None => ("0".into(), String::new(), String::new()),
        };
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let status = self.status.replace([',', '\n'], ";");
        format!(
            "{placement},{levels},{grids},{norm},{},{},{status}",
            opt(self.eval_error),
            opt(self.final_loss)
        )
    }
}

/// Trains one model per (placement, level config) pair, or only the
/// baseline when `placements` is empty. A failing cell is recorded and the
/// sweep moves on.
pub fn ablation_sweep(
    arch: MnistArch,
    placements: &[usize],
    level_configs: &[PatchReorderConfig],
    cfg: &TrainConfig,
    train_set: &MnistSet,
    eval_set: &MnistSet,
    mut on_row: impl FnMut(&AblationRow) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    let cells: Vec<AblationCell> = if placements.is_empty() {
        vec![AblationCell {
            placement: None,
            config: None,
        }]
    } else {
        placements
            .iter()
            .flat_map(|&p| {
                level_configs.iter().map(move |c| AblationCell {
                    placement: Some(p),
                    config: Some(c.clone()),
                })
            })
            .collect()
    };
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let row = match run_cell(&cell, arch, cfg, train_set, eval_set) {
            Ok((err, loss)) => AblationRow {
                cell,
                eval_error: Some(err),
                final_loss: Some(loss),
                status: "ok".into(),
            },
            Err(e) => AblationRow {
                cell,
                eval_error: None,
                final_loss: None,
                status: format!("failed: {e}"),
            },
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

fn run_cell(
    cell: &AblationCell,
    arch: MnistArch,
    cfg: &TrainConfig,
    train_set: &MnistSet,
    eval_set: &MnistSet,
) -> Result<(f64, f64)> {
    if let Some(p) = cell.placement {
        if p == 0 || p > 2 {
            return Err(crate::error::Error::Config(format!(
                "placement conv{p} does not exist; the network has conv1 and conv2"
            )));
        }
    }
    let spec = cell.spec(arch);
    spec.validate()?;
    let out = train::<f32>(&spec, cfg, train_set, None, |_| Ok(()))?;
    if let Some((iter, loss)) = out.diverged {
        return Err(crate::error::Error::Divergence { iter, loss });
    }
    let mut net = out.network;
    let err = evaluate(&mut net, eval_set, cfg.eval_batch)?;
    Ok((err, out.log.last().map(|r| r.train_loss).unwrap_or(f64::NAN)))
}
