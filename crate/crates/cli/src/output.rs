//! Everything printed on stdout goes through here: pretty JSON by default,
//! CSV for tabular results when asked.

use std::io::Write;

use anyhow::Result;
use mpvr_core::ablation::{AblationRow, VariantRow};
use mpvr_core::corpus::CorpusStats;
use mpvr_core::eval::CurvePoint;
use mpvr_core::EvalReport;
use serde::Serialize;

use crate::UsageError;

pub trait Tabular {
    fn header() -> Vec<&'static str>;
    fn record(&self) -> Vec<String>;
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl Tabular for AblationRow {
    fn header() -> Vec<&'static str> {
        vec!["row", "options", "status", "accuracy", "n_templates", "corpus_hash", "error"]
    }
    fn record(&self) -> Vec<String> {
        vec![
            self.row.clone(),
            self.options.label(),
            self.status.clone(),
            opt(&self.accuracy),
            opt(&self.n_templates),
            opt(&self.corpus_hash),
            opt(&self.error),
        ]
    }
}

impl Tabular for VariantRow {
    fn header() -> Vec<&'static str> {
        vec!["variant", "status", "accuracy", "n_prompts", "stage2_calls", "corpus_hash", "error"]
    }
    fn record(&self) -> Vec<String> {
        vec![
            self.variant.clone(),
            self.status.clone(),
            opt(&self.accuracy),
            opt(&self.n_prompts),
            self.stage2_calls.to_string(),
            opt(&self.corpus_hash),
            opt(&self.error),
        ]
    }
}

impl Tabular for CurvePoint {
    fn header() -> Vec<&'static str> {
        vec!["fraction", "prompts_per_class", "accuracy"]
    }
    fn record(&self) -> Vec<String> {
        vec![
            self.fraction.to_string(),
            self.prompts_per_class.to_string(),
            self.accuracy.to_string(),
        ]
    }
}

impl Tabular for CorpusStats {
    fn header() -> Vec<&'static str> {
        vec![
            "n_classes",
            "n_prompts_total",
            "min_prompts_per_class",
            "mean_prompts_per_class",
            "max_prompts_per_class",
            "mean_token_count",
        ]
    }
    fn record(&self) -> Vec<String> {
        vec![
            self.n_classes.to_string(),
            self.n_prompts_total.to_string(),
            self.min_prompts_per_class.to_string(),
            self.mean_prompts_per_class.to_string(),
            self.max_prompts_per_class.to_string(),
            self.mean_token_count.to_string(),
        ]
    }
}

impl Tabular for EvalReport {
    fn header() -> Vec<&'static str> {
        vec![
            "dataset",
            "source_tags",
            "strategy",
            "temperature",
            "embedding_model",
            "n_items",
            "n_correct",
            "top1_accuracy",
            "std_accuracy",
        ]
    }
    fn record(&self) -> Vec<String> {
        let strategy = self
            .strategy
            .and_then(|s| serde_json::to_value(s).ok())
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        vec![
            self.dataset.clone(),
            self.source_tags.join("+"),
            strategy,
            self.temperature.to_string(),
            self.embedding_model.clone(),
            self.n_items.to_string(),
            self.n_correct.to_string(),
            self.top1_accuracy.to_string(),
            opt(&self.std_accuracy),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Printer {
    pub csv: bool,
}

impl Printer {
    pub fn json<T: Serialize + ?Sized>(&self, value: &T) -> Result<()> {
        if self.csv {
            anyhow::bail!(UsageError("--csv is only available for tabular output".into()));
        }
        let mut out = std::io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, value)?;
        writeln!(out)?;
        Ok(())
    }

    pub fn rows<T: Serialize + Tabular>(&self, rows: &[T]) -> Result<()> {
        if !self.csv {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(std::io::stdout().lock());
        w.write_record(T::header())?;
        for r in rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row<T: Serialize + Tabular>(&self, row: &T) -> Result<()> {
        if self.csv {
            self.rows(std::slice::from_ref(row))
        } else {
            self.json(row)
        }
    }
}
