use coms2t::backbone::Backbone;
use coms2t::data::{make_windows, synth_generate, NormStats, SynthConfig};
use coms2t::disentangle::{build_partition, ParameterPartition};
use coms2t::experiment::{
    community_synth, new_bank, prepare, pretrained_bank, temporal_shift_synth, warm_up, DataSource, ExperimentConfig,
};
use coms2t::train::{predict, predict_mae, run_finetune, run_warmup, test_time_adapt, AdaptPlan, Transcript, WarmupPlan};

fn micro() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.data = DataSource::Synth(temporal_shift_synth(5, 6, 2));
    cfg.seeds = vec![0];
    cfg.plan.warmup.max_epochs = 4;
    cfg.plan.pretrain.epochs = 4;
    cfg.plan.finetune.epochs = 3;
    cfg.plan.adapt.epochs = 2;
    cfg
}

#[test]
fn constant_target_is_learned_within_thirty_epochs() {
    let mut ds = synth_generate(&SynthConfig::small(3, 400, 4)).unwrap();
    ds.observations.fill(5.0);
    let steps: Vec<usize> = (0..ds.n_steps()).collect();
    let cfg = ExperimentConfig::desk_scale();
    let bcfg = cfg.backbone.config(3, 1, 12, 12);
    let mut model = Backbone::new(bcfg, Some(ds.adjacency.view()), 3).unwrap();
    let windows = make_windows(&ds, 12, 12, &steps).unwrap();
    let plan = WarmupPlan { max_epochs: 30, batch_size: 8, patience: 30, ..WarmupPlan::default() };
    let out = run_warmup(&mut model, &ds, &windows, &windows, &plan, 0, &mut Transcript::default()).unwrap();
    let mae = predict_mae(&model, None, &ds, &windows, &NormStats::identity(1)).unwrap();
    assert!(out.train_loss.len() <= 30);
    assert!(mae < 0.05, "train MAE {mae} after {} epochs", out.train_loss.len());
}

#[test]
fn zero_epoch_warmup_keeps_initialization() {
    let prep = prepare(&micro()).unwrap();
    let mut cfg = prep.config.clone();
    cfg.plan.warmup.max_epochs = 0;
    let ds = &prep.train_phase.ds;
    let bcfg = cfg.backbone.config(ds.n_nodes(), ds.n_features(), cfg.kappa, cfg.horizon);
    let mut model = Backbone::new(bcfg, Some(ds.adjacency.view()), 9).unwrap();
    let init = model.params.values.clone();
    let out = run_warmup(&mut model, ds, &prep.train_windows, &prep.val_windows, &cfg.plan.warmup, 0, &mut Transcript::default()).unwrap();
    assert_eq!(model.params.values, init);
    assert_eq!(out.ledger.units, 0);
    assert!(out.ledger.accum.iter().all(|&v| v == 0.0));
    assert!(out.train_loss.is_empty());
}

#[test]
fn warmup_ledgers_are_bitwise_reproducible() {
    let prep = prepare(&micro()).unwrap();
    let a = warm_up(&prep, 3).unwrap();
    let b = warm_up(&prep, 3).unwrap();
    assert_eq!(a.outcome.ledger, b.outcome.ledger);
    assert_eq!(a.model.params.values, b.model.params.values);
    let c = warm_up(&prep, 4).unwrap();
    assert_ne!(a.outcome.ledger.accum, c.outcome.ledger.accum);
}

#[test]
fn fine_tune_starts_where_warm_up_ended() {
    let prep = prepare(&micro()).unwrap();
    let warm = warm_up(&prep, 0).unwrap();
    let mut model = warm.model.clone();
    let partition = build_partition(&model.params, &warm.outcome.ledger, 60.0, 0.0).unwrap();
    partition.apply_to(&mut model.params).unwrap();
    assert_eq!(model.params.values, warm.model.params.values);
    let bank = new_bank(&prep, 0).unwrap();
    let phase = &prep.train_phase;
    let with_prompts = predict(&model, Some((&bank, &phase.ctx)), &phase.ds, &prep.val_windows).unwrap();
    let plain = predict(&warm.model, None, &phase.ds, &prep.val_windows).unwrap();
    assert!(with_prompts.iter().zip(plain.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn fine_tune_never_moves_the_stable_part_and_does_not_hurt_validation() {
    let prep = prepare(&micro()).unwrap();
    let warm = warm_up(&prep, 1).unwrap();
    let (mut bank, _) = pretrained_bank(&prep, 1).unwrap();
    let mut model = warm.model.clone();
    let partition = build_partition(&model.params, &warm.outcome.ledger, 60.0, 0.0).unwrap();
    let frozen: Vec<(usize, u64)> = partition.neocortex_indices().map(|i| (i, model.params.values[i].to_bits())).collect();
    let phase = &prep.train_phase;
    let mut plan = prep.config.plan.finetune.clone();
    plan.epochs = 6;
    let out = run_finetune(
        &mut model,
        &partition,
        Some((&mut bank, &phase.ctx)),
        Some(&prep.ssl_train),
        &phase.ds,
        &prep.train_windows,
        &prep.val_windows,
        &plan,
        5,
        &mut Transcript::default(),
    )
    .unwrap();
    assert!(frozen.iter().all(|&(i, bits)| model.params.values[i].to_bits() == bits));
    assert!(frozen.iter().all(|&(i, _)| !out.touched_backbone[i]));
    assert!(partition.hippocampus_indices().any(|i| out.touched_backbone[i]));
    let before = predict_mae(&warm.model, None, &phase.ds, &prep.val_windows, &prep.norm).unwrap();
    let after = predict_mae(&model, Some((&bank, &phase.ctx)), &phase.ds, &prep.val_windows, &prep.norm).unwrap();
    assert!(after <= before, "validation MAE rose from {before} to {after}");
}

#[test]
fn all_trainable_partition_freezes_nothing() {
    let prep = prepare(&micro()).unwrap();
    let warm = warm_up(&prep, 0).unwrap();
    let p = ParameterPartition::all_trainable(&warm.model.params);
    assert_eq!(p.neocortex_count(), 0);
    assert_eq!(p.hippocampus_indices().count(), warm.model.params.len());
}

#[test]
fn zero_epoch_adaptation_leaves_the_bank_alone() {
    let prep = prepare(&micro()).unwrap();
    let (mut bank, _) = pretrained_bank(&prep, 0).unwrap();
    let before = bank.params.values.clone();
    let plan = AdaptPlan { epochs: 0, ..prep.config.plan.adapt.clone() };
    let out = test_time_adapt(&mut bank, &prep.adapt_sets[0], &plan, 0, &mut Transcript::default()).unwrap();
    assert!(out.losses.is_empty());
    assert_eq!(bank.params.values, before);
}

#[test]
fn adaptation_only_touches_encoders_and_interaction() {
    let prep = prepare(&micro()).unwrap();
    let (mut bank, _) = pretrained_bank(&prep, 0).unwrap();
    let before = bank.params.values.clone();
    let out = test_time_adapt(&mut bank, &prep.adapt_sets[0], &prep.config.plan.adapt, 0, &mut Transcript::default()).unwrap();
    let adaptable: std::collections::HashSet<usize> = bank.adaptable_indices().into_iter().collect();
    for (i, (&a, &b)) in before.iter().zip(&bank.params.values).enumerate() {
        if !adaptable.contains(&i) {
            assert_eq!(a.to_bits(), b.to_bits(), "scalar {i} outside the adaptable set moved");
            assert!(!out.touched[i]);
        }
    }
    assert!(out.touched.iter().any(|&t| t));
}

#[test]
fn adaptation_without_shift_does_no_harm() {
    let mut cfg = micro();
    cfg.data = DataSource::Synth(community_synth(6, 8, 3));
    cfg.plan.pretrain.epochs = 40;
    let prep = prepare(&cfg).unwrap();
    // Adaptation rows come from the training slice itself, so there is no
    // shift between what the bank was fitted on and what it adapts to.
    let rows: Vec<usize> = (0..prep.ssl_train.len()).step_by(7).collect();
    let adapt = prep.ssl_train.subset(&rows);
    for seed in 0..3 {
        let (mut bank, _) = pretrained_bank(&prep, seed).unwrap();
        let before = prep.ssl_val.mean_loss(&bank).unwrap();
        test_time_adapt(&mut bank, &adapt, &AdaptPlan::default(), seed, &mut Transcript::default()).unwrap();
        let after = prep.ssl_val.mean_loss(&bank).unwrap();
        let change = (after - before) / before;
        assert!(change.abs() <= 0.05, "seed {seed}: held-out SSL loss {before} → {after} ({:+.1}%)", 100.0 * change);
    }
}
