use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use tinycd::data::{load_checkpoint, load_dataset, Split};
use tinycd::train::{evaluate, load_split, BEST_CHECKPOINT};
use tinycd::{Element, Metrics, Precision, RunConfig};

use crate::commands::{effective_config, train_config, UsageError};
use crate::{Common, Status};

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// One grid axis as `key=v1,v2,...`; repeat for more axes. Keys are
    /// dotted config paths; model and optimizer fields may be given bare
    /// (`classifier`, `lr`, ...).
    #[arg(long = "grid", value_name = "KEY=V1,V2", required = true)]
    pub axes: Vec<String>,
    /// Config override applied to every cell.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Refuse grids with more cells than this.
    #[arg(long, default_value_t = 16)]
    pub max_cells: usize,
    /// Train cells concurrently, one thread each.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

const MODEL_KEYS: [&str; 8] = [
    "input_channels",
    "backbone_widths",
    "backbone_strides",
    "mamb_hidden_layers",
    "mixing_strategy_bottleneck",
    "mixing_strategy_skip",
    "classifier",
    "use_skip_connections",
];
const OPTIMIZER_KEYS: [&str; 6] = ["lr", "weight_decay", "beta1", "beta2", "eps", "amsgrad"];

fn resolve_key(key: &str) -> String {
    if MODEL_KEYS.contains(&key) {
        format!("model.{key}")
    } else if OPTIMIZER_KEYS.contains(&key) {
        format!("optimizer.{key}")
    } else {
        key.to_string()
    }
}

fn parse_axes(axes: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    axes.iter()
        .map(|a| {
            let (k, vs) =
                a.split_once('=').ok_or_else(|| UsageError(format!("grid axis '{a}' is not of the form key=v1,v2")))?;
            let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(UsageError(format!("grid axis '{k}' has no values")).into());
            }
            Ok((resolve_key(k.trim()), values))
        })
        .collect()
}

/// Every combination of axis values, first axis slowest.
fn cells(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut out = vec![Vec::new()];
    for (key, values) in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push((key.clone(), v.clone()));
                    cell
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    cell: usize,
    delta: Vec<(String, String)>,
    params: usize,
    best_epoch: usize,
    val: Metrics,
    test: Option<Metrics>,
}

fn test_metrics_as<T: Element>(cfg: &RunConfig, dir: &Path) -> Result<Metrics> {
    let ckpt = load_checkpoint::<T>(&dir.join(BEST_CHECKPOINT), Some(&cfg.model))?;
    let data = load_split(&cfg.data_root, Split::Test)?;
    Ok(evaluate(&ckpt.model, &data, cfg.threshold, cfg.batch_size)?)
}

fn run_cell(index: usize, delta: &[(String, String)], cfg: &RunConfig, out: &Path) -> Result<Row> {
    let dir = out.join(format!("cell_{index:02}"));
    let label = format!("[cell {index}]");
    let outcome =
        train_config(cfg, &dir, &mut |line| println!("{label} {line}")).with_context(|| format!("cell {index}"))?;
    let has_test = load_dataset(&cfg.data_root, Split::Test).is_ok();
    let test = if has_test {
        Some(match cfg.precision {
            Precision::F32 => test_metrics_as::<f32>(cfg, &dir)?,
            Precision::F64 => test_metrics_as::<f64>(cfg, &dir)?,
        })
    } else {
        None
    };
    Ok(Row {
        cell: index,
        delta: delta.to_vec(),
        params: outcome.param_count,
        best_epoch: outcome.best_epoch,
        val: outcome.best,
        test,
    })
}

fn table(rows: &[Row]) -> String {
    let mut s = format!(
        "{:<4} {:<56} {:>8} {:>5} {:>8} {:>8} {:>8} {:>8}\n",
        "cell", "config", "params", "best", "val_f1", "val_iou", "test_f1", "test_iou"
    );
    for r in rows {
        let delta = r.delta.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        let (tf, ti) = match &r.test {
            Some(m) => (format!("{:.4}", m.f1), format!("{:.4}", m.iou)),
            None => ("-".into(), "-".into()),
        };
        s += &format!(
            "{:<4} {:<56} {:>8} {:>5} {:>8.4} {:>8.4} {:>8} {:>8}\n",
            r.cell, delta, r.params, r.best_epoch, r.val.f1, r.val.iou, tf, ti
        );
    }
    s
}

pub fn ablate(common: &Common, args: AblateArgs) -> Result<Status> {
    let mut base = effective_config(common, &args.overrides)?;
    if let Some(root) = &args.data_root {
        base.data_root = root.clone();
    }
    if let Some(e) = args.epochs {
        base.epochs = e;
    }
    let out = common.out.as_deref().ok_or_else(|| UsageError("--out is required for ablate".into()))?;
    let axes = parse_axes(&args.axes)?;
    let grid = cells(&axes);
    if grid.len() > args.max_cells {
        return Err(
            UsageError(format!("grid has {} cells, more than --max-cells {}", grid.len(), args.max_cells)).into()
        );
    }
    // Resolve every cell before training anything so a bad value fails fast.
    let configs = grid
        .iter()
        .map(|delta| {
            delta.iter().try_fold(base.clone(), |cfg, (k, v)| cfg.with_override(k, v)).map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let rows: Vec<Row> = if args.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = grid
                .iter()
                .zip(&configs)
                .enumerate()
                .map(|(i, (delta, cfg))| s.spawn(move || run_cell(i, delta, cfg, out)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("cell thread panicked")).collect::<Result<Vec<_>>>()
        })?
    } else {
        grid.iter()
            .zip(&configs)
            .enumerate()
            .map(|(i, (delta, cfg))| run_cell(i, delta, cfg, out))
            .collect::<Result<Vec<_>>>()?
    };

    let text = table(&rows);
    print!("{text}");
    std::fs::write(out.join("ablation.txt"), &text).context("writing ablation.txt")?;
    std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rows)?).context("writing ablation.json")?;
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian_first_axis_slowest() {
        let axes = parse_axes(&["use_skip_connections=true,false".into(), "seed=0,1,2".into()]).unwrap();
        assert_eq!(axes[0].0, "model.use_skip_connections");
        let g = cells(&axes);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1], vec![("model.use_skip_connections".into(), "true".into()), ("seed".into(), "1".into())]);
        assert_eq!(g[3][0].1, "false");
        assert!(parse_axes(&["lr".into()]).is_err());
        assert!(parse_axes(&["lr=".into()]).is_err());
        assert_eq!(resolve_key("lr"), "optimizer.lr");
    }
}
