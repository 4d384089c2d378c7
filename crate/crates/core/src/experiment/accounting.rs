use serde::{Deserialize, Serialize};

use crate::train::Transcript;

/// Structural sizes that the updated-parameter count is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateLayout {
    /// `L`: every backbone scalar.
    pub backbone_size: usize,
    /// Adaptive backbone scalars (hippocampus plus the input/output head),
    /// summed over fine-tune iterations.
    pub adaptive_backbone: usize,
    /// Prompt-bank scalars reached by the fine-tune loss (encoders and
    /// alignment projections, plus the interaction module under the
    /// self-supervised co-loss), summed over fine-tune iterations.
    pub prompt_plumbing: usize,
    /// `E_P`: encoder and interaction scalars re-fitted per adaptation.
    pub e_p: usize,
    /// `P`: adaptation events.
    pub events: usize,
}

/// Instrumented update counts next to the closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateAccounting {
    pub layout: UpdateLayout,
    /// `γ%`: fine-tuned scalars as a percentage of `L`; the adaptive
    /// backbone and the prompt plumbing both count toward it.
    pub gamma_pct: f64,
    pub warmup_updates: usize,
    pub finetune_updates: usize,
    pub adapt_updates: Vec<usize>,
    pub total: usize,
    /// `L + L·γ% + P·E_P` evaluated on the integer bucket sizes.
    pub closed_form: usize,
    pub matches: bool,
    /// The comparator formula `K·L + L·P·γ%` with `K = 4`, for context.
    pub caustg_context: f64,
    pub bucketing: String,
}

/// `L + L·γ% + P·E_P`.
pub fn update_closed_form(l: f64, gamma_pct: f64, p: f64, e_p: f64) -> f64 {
    l + l * gamma_pct / 100.0 + p * e_p
}

/// `K·L + L·P·γ%`: every adaptation re-trains the γ% share of the model.
pub fn caustg_closed_form(k: f64, l: f64, p: f64, gamma_pct: f64) -> f64 {
    k * l + l * p * gamma_pct / 100.0
}

/// Splits the transcript into stage runs (a new run starts when the stage
/// changes or its epoch counter restarts) and returns, per run, the stage
/// and the last recorded updated-parameter count.
fn stage_runs(transcript: &Transcript) -> Vec<(String, usize)> {
    let mut runs: Vec<(String, usize)> = Vec::new();
    let mut prev: Option<(&str, usize)> = None;
    for r in &transcript.records {
        let fresh = match prev {
            Some((stage, epoch)) => stage != r.stage || r.epoch <= epoch,
            None => true,
        };
        if fresh {
            runs.push((r.stage.clone(), r.updated_params));
        } else if let Some(last) = runs.last_mut() {
            last.1 = r.updated_params;
        }
        prev = Some((&r.stage, r.epoch));
    }
    runs
}

/// Counts the scalars each stage changed, from the per-unit counters in
/// the transcript, and compares the sum with the closed form.
pub fn count_updated_params(transcript: &Transcript, layout: UpdateLayout) -> UpdateAccounting {
    let runs = stage_runs(transcript);
    let sum = |stage: &str| runs.iter().filter(|(s, _)| s == stage).map(|(_, n)| n).sum::<usize>();
    let warmup_updates = sum("warmup");
    let finetune_updates = sum("finetune");
    let adapt_updates: Vec<usize> = runs.iter().filter(|(s, _)| s == "adapt").map(|(_, n)| *n).collect();
    let total = warmup_updates + finetune_updates + adapt_updates.iter().sum::<usize>();
    let bucket = layout.adaptive_backbone + layout.prompt_plumbing;
    let closed_form = layout.backbone_size + bucket + layout.events * layout.e_p;
    let l = layout.backbone_size as f64;
    let gamma_pct = if l > 0.0 { 100.0 * bucket as f64 / l } else { 0.0 };
    UpdateAccounting {
        layout,
        gamma_pct,
        warmup_updates,
        finetune_updates,
        adapt_updates,
        total,
        closed_form,
        matches: total == closed_form,
        caustg_context: caustg_closed_form(4.0, l, layout.events as f64, gamma_pct),
        bucketing: "L = all backbone scalars (warm-up); L·γ% = adaptive backbone scalars including the head, plus the prompt \
                    encoders and alignment projections (and the interaction module when the self-supervised co-loss is on) \
                    updated during fine-tuning; E_P = encoder and interaction scalars per adaptation event"
            .into(),
    }
}
