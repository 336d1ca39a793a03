//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default; pass criterion numbers as arguments to run
//! a subset (`cargo test -p gres-core --test acceptance -- 1 3`).

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gres_core::dataset::{load_split, regroup_samples, write_corpus};
use gres_core::encoders::VisualFeatures;
use gres_core::hierarchizer::{rank_order, score_prototypes};
use gres_core::kernels::bce_with_logit;
use gres_core::metrics::{adapted_miou, f_measure_curve, mae, sod_metrics, vanilla_miou, Category, EvalRecord, SaliencyPair};
use gres_core::model::Roles;
use gres_core::nn::ParamStore;
use gres_core::objectives::{group_objective, triplet_loss, triplet_var, ObjectiveSettings};
use gres_core::predictor::{decide, emit_mask, Decision, GroupEmbedding};
use gres_core::tensor::Tensor;
use gres_core::tqm::{extract_prototype, language_heatmap, vision_heatmaps, Heatmap, ProjectedLanguage};
use gres_core::trainer::{evaluate, synthetic_splits, train};
use gres_core::{EvalReport, Graph, GresModel, GroupSample, RankCriterion, RunConfig, Vocab};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rand_vec(rng, n)).unwrap()
}

// ---------------------------------------------------------------- criterion 1

fn oracle_cosine(v: &Tensor, q: &[f64]) -> Vec<f64> {
    let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut d, mut nv, mut nq) = (0.0, 0.0, 0.0);
            for k in 0..c {
                let a = v.data()[(k * h + y) * w + x];
                d += a * q[k];
                nv += a * a;
                nq += q[k] * q[k];
            }
            let denom = nv.sqrt() * nq.sqrt();
            out[y * w + x] = if nv.sqrt() <= 1e-8 || nq.sqrt() <= 1e-8 { 0.0 } else { d / denom };
        }
    }
    out
}

fn oracle_prototype(v: &Tensor, m: &[f64]) -> Vec<f64> {
    let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let mut total = 0.0;
    for &mi in m {
        total += (mi + 1.0) / 2.0;
    }
    let mut p = vec![0.0; c];
    for k in 0..c {
        for y in 0..h {
            for x in 0..w {
                p[k] += (m[y * w + x] + 1.0) / 2.0 * v.data()[(k * h + y) * w + x];
            }
        }
        p[k] /= total.max(1e-8);
    }
    p
}

fn oracle_order(s_pos: &[f64], s_neg: &[f64], criterion: RankCriterion) -> Vec<usize> {
    let n = s_pos.len();
    // Rank = number of entries strictly before i in the sorted order.
    let rank = |vals: &[f64], desc: bool, i: usize| {
        (0..n)
            .filter(|&j| {
                let before = if desc { vals[j] > vals[i] } else { vals[j] < vals[i] };
                before || (vals[j] == vals[i] && j < i)
            })
            .count()
    };
    let key: Vec<usize> = (0..n)
        .map(|i| match criterion {
            RankCriterion::Pos => rank(s_pos, false, i),
            RankCriterion::Neg => rank(s_neg, true, i),
            _ => rank(s_pos, false, i) + rank(s_neg, true, i),
        })
        .collect();
    // Selection sort on (key, index).
    let mut left: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    while !left.is_empty() {
        let best = (0..left.len()).min_by_key(|&a| (key[left[a]], left[a])).unwrap();
        order.push(left.remove(best));
    }
    order
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Check {
    const INSTANCES: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_l, mut worst_p, mut worst_v) = (0.0f64, 0.0f64, 0.0f64);
    let mut rankings = 0;
    for inst in 0..INSTANCES {
        let c = rng.gen_range(1..9);
        let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let n = rng.gen_range(1..6);
        let lp = ProjectedLanguage { lp: rand_vec(&mut rng, c) };
        let lp_anti = ProjectedLanguage { lp: rand_vec(&mut rng, c) };
        let group: Vec<VisualFeatures> = (0..n)
            .map(|_| {
                let mut v = rand_tensor(&mut rng, &[c, h, w]);
                // Occasionally zero a column to exercise the norm guard.
                if inst % 10 == 0 {
                    for k in 0..c {
                        v.data_mut()[k * h * w] = 0.0;
                    }
                }
                VisualFeatures { v }
            })
            .collect();

        let mut protos = Vec::new();
        for v in &group {
            let m = language_heatmap(v, &lp).map_err(|e| e.to_string())?;
            worst_l = worst_l.max(max_diff(m.values.data(), &oracle_cosine(&v.v, &lp.lp)));
            let p = extract_prototype(v, &m).map_err(|e| e.to_string())?;
            worst_p = worst_p.max(max_diff(&p.p, &oracle_prototype(&v.v, m.values.data())));
            protos.push(p);
        }
        for v in &group {
            let maps: Vec<Heatmap> = vision_heatmaps(v, &protos).map_err(|e| e.to_string())?;
            for (map, p) in maps.iter().zip(&protos) {
                worst_v = worst_v.max(max_diff(map.values.data(), &oracle_cosine(&v.v, &p.p)));
            }
        }

        let scores = score_prototypes(&protos, &lp, &lp_anti).map_err(|e| e.to_string())?;
        for (i, p) in protos.iter().enumerate() {
            let dp: f64 = p.p.iter().zip(&lp.lp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dn: f64 = p.p.iter().zip(&lp_anti.lp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            ensure((dp - scores.s_pos[i]).abs() <= 1e-6 && (dn - scores.s_neg[i]).abs() <= 1e-6, || {
                format!("score mismatch on instance {inst}")
            })?;
        }
        // Ties: duplicate a score now and then.
        let mut scores = scores;
        if n > 1 && inst % 4 == 0 {
            scores.s_pos[1] = scores.s_pos[0];
            scores.s_neg[n - 1] = scores.s_neg[0];
        }
        for crit in [RankCriterion::Pos, RankCriterion::Neg, RankCriterion::PosPlusNeg] {
            let (order, _) = rank_order(&scores, crit, 0).map_err(|e| e.to_string())?;
            let expected = oracle_order(&scores.s_pos, &scores.s_neg, crit);
            ensure(order == expected, || format!("{crit} ranking {order:?} vs oracle {expected:?} on instance {inst}"))?;
            rankings += 1;
        }
    }
    let worst = worst_l.max(worst_p).max(worst_v);
    ensure(worst <= 1e-6, || format!("max abs diff {worst:e} > 1e-6"))?;
    Ok(format!(
        "{INSTANCES} instances; max diff language {worst_l:.1e}, prototype {worst_p:.1e}, vision {worst_v:.1e}; {rankings} rankings exact"
    ))
}

// ---------------------------------------------------------------- criterion 2

const FD_STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
const ABS_FLOOR: f64 = 1e-8;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale <= ABS_FLOOR {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn tiny_model(seed: u64) -> (GresModel, Vec<GroupSample>) {
    let mut c = RunConfig::default();
    c.group_size = 2;
    c.image_size = 16;
    c.c_l = 5;
    c.c_v = 4;
    c.encoder_widths = (3, 3);
    c.encoder_kernel = 3;
    c.decoder_widths = (3, 3);
    c.min_radius = 2;
    c.max_radius = 5;
    c.train_groups = 3;
    c.test_groups = 1;
    c.max_distractors = 1;
    c.seed = seed;
    let (train_split, _) = synthetic_splits(&c).unwrap();
    let mut model = GresModel::new(c.model_config(), Vocab::from(train_split.manifest.vocab.clone()), seed).unwrap();
    // Zero-initialized biases leave flat background columns of V exactly at
    // zero, where the cosine norm guard is discontinuous. Move off that point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        for x in model.store.get_mut(id).data_mut() {
            *x += rng.gen_range(-0.05..0.05);
        }
    }
    (model, train_split.groups)
}

/// Loss value and the ranking order of each branch, for kink/flip detection.
type LossFn<'a> = dyn Fn(&GresModel, &mut Graph, &gres_core::nn::Bound) -> (gres_core::Var, Vec<Vec<usize>>, Vec<f64>) + 'a;

fn check_param_grads(model: &GresModel, rng: &mut ChaCha8Rng, samples: usize, f: &LossFn) -> Result<(f64, usize, usize), String> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let (loss, _, _) = f(model, &mut g, &p);
    let grads = g.backward(loss);
    let ids: Vec<_> = model.store.ids().collect();
    let value_at = |store: &ParamStore| {
        let mut m = model.clone();
        m.store = store.clone();
        let mut g = Graph::new();
        let p = m.store.bind_frozen(&mut g);
        let (loss, orders, hinges) = f(&m, &mut g, &p);
        (g.value(loss).item(), orders, hinges)
    };
    let (_, base_orders, base_hinges) = value_at(&model.store);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for _ in 0..samples {
        let id = ids[rng.gen_range(0..ids.len())];
        let k = rng.gen_range(0..model.store.get(id).len());
        let analytic = grads.get(p.var(id)).map_or(0.0, |t| t.data()[k]);
        let mut plus = model.store.clone();
        plus.get_mut(id).data_mut()[k] += FD_STEP;
        let mut minus = model.store.clone();
        minus.get_mut(id).data_mut()[k] -= FD_STEP;
        let (fp, op, hp) = value_at(&plus);
        let (fm, om, hm) = value_at(&minus);
        // The ranking is piecewise constant and the hinge has a kink at 0.
        let hinge_near_kink = base_hinges.iter().chain(&hp).chain(&hm).any(|a| a.abs() < 1e-4);
        if op != base_orders || om != base_orders || hinge_near_kink {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic, numeric));
        checked += 1;
    }
    Ok((worst, checked, skipped))
}

fn mean_bce(g: &mut Graph, logits: &[gres_core::Var], group: &GroupSample, invert: bool) -> gres_core::Var {
    let terms: Vec<_> = group
        .images
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_positive)
        .map(|(n, r)| {
            let t = r.target();
            let (h, w) = (t.shape()[0], t.shape()[1]);
            let t = if invert { t.map(|y| 1.0 - y) } else { t };
            g.bce_with_logits(logits[n], &t.reshape(&[1, h, w]).unwrap()).unwrap()
        })
        .collect();
    g.mean(&terms).unwrap()
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut lines = Vec::new();

    // Triplet loss against its plain-function form.
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for _ in 0..200 {
        let c = rng.gen_range(1..8);
        let e = rand_vec(&mut rng, c);
        let lp = rand_vec(&mut rng, c);
        let la = rand_vec(&mut rng, c);
        let pos = rng.gen_bool(0.5);
        let m = rng.gen_range(0.0..1.5);
        let f = |e: &[f64], lp: &[f64], la: &[f64]| {
            triplet_loss(
                &GroupEmbedding { e: e.to_vec() },
                &ProjectedLanguage { lp: lp.to_vec() },
                &ProjectedLanguage { lp: la.to_vec() },
                pos,
                m,
            )
        };
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let gap = if pos { d(&e, &lp) - d(&e, &la) + m } else { d(&e, &la) - d(&e, &lp) + m };
        if gap.abs() < 1e-3 {
            skipped += 1;
            continue;
        }
        let mut g = Graph::new();
        let (ev, lv, av) = (
            g.param(Tensor::vector(e.clone())),
            g.param(Tensor::vector(lp.clone())),
            g.param(Tensor::vector(la.clone())),
        );
        let loss = triplet_var(&mut g, ev, lv, av, pos, m).map_err(|e| e.to_string())?;
        let grads = g.backward(loss);
        for (which, var) in [(0, ev), (1, lv), (2, av)] {
            for k in 0..c {
                let mut args = [e.clone(), lp.clone(), la.clone()];
                args[which][k] += FD_STEP;
                let fp = f(&args[0], &args[1], &args[2]);
                args[which][k] -= 2.0 * FD_STEP;
                let fm = f(&args[0], &args[1], &args[2]);
                let analytic = grads.get(var).map_or(0.0, |t| t.data()[k]);
                worst = worst.max(rel_err(analytic, (fp - fm) / (2.0 * FD_STEP)));
                checked += 1;
            }
        }
    }
    ensure(worst <= REL_TOL, || format!("triplet rel err {worst:e}"))?;
    lines.push(format!("triplet {worst:.1e} ({checked} checked, {skipped} near kink)"));

    // Segmentation CE on raw logits against the per-pixel closed form.
    let mut worst_logit = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let x = rand_tensor(&mut rng, &[h, w]).map(|v| 4.0 * v);
        let y = Tensor::new(&[h, w], (0..h * w).map(|_| f64::from(rng.gen_range(0u8..2))).collect()).unwrap();
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let loss = g.bce_with_logits(xv, &y).map_err(|e| e.to_string())?;
        let grads = g.backward(loss);
        let f = |xs: &[f64]| xs.iter().zip(y.data()).map(|(&a, &b)| bce_with_logit(a, b)).sum::<f64>() / xs.len() as f64;
        for k in 0..h * w {
            let mut xp = x.data().to_vec();
            xp[k] += FD_STEP;
            let mut xm = x.data().to_vec();
            xm[k] -= FD_STEP;
            let numeric = (f(&xp) - f(&xm)) / (2.0 * FD_STEP);
            worst_logit = worst_logit.max(rel_err(grads.get(xv).unwrap().data()[k], numeric));
        }
    }
    ensure(worst_logit <= REL_TOL, || format!("CE logit rel err {worst_logit:e}"))?;

    // Model-level checks: CE, mirror CE and the composite objective.
    let settings = |crit| ObjectiveSettings {
        lambda: 0.7,
        margin: 1.0,
        use_mirror: true,
        use_triplet: true,
        criterion: crit,
        seed: 3,
    };
    let mut worst = [0.0f64; 3];
    let mut counts = [(0usize, 0usize); 3];
    for inst in 0..6u64 {
        let (model, groups) = tiny_model(inst);
        let group = groups.iter().find(|g| g.positives() > 0).unwrap().clone();
        let images: Vec<Tensor> = group.images.iter().map(|r| r.to_tensor()).collect();
        let branch = |swap: bool| {
            let images = images.clone();
            let group = group.clone();
            move |m: &GresModel, g: &mut Graph, p: &gres_core::nn::Bound| {
                let v = m.encode_images(g, p, &images).unwrap();
                let roles: Roles = m.encode_language(g, p, &group.expression).unwrap();
                let roles = if swap { roles.swapped() } else { roles };
                let out = m.branch(g, p, &v, roles, RankCriterion::PosPlusNeg, 0, false).unwrap();
                let loss = mean_bce(g, &out.logits, &group, swap);
                (loss, vec![out.order], Vec::new())
            }
        };
        let ce = branch(false);
        let mirror = branch(true);
        let composite = |m: &GresModel, g: &mut Graph, p: &gres_core::nn::Bound| {
            let obj = group_objective(m, g, p, &group, 2, 3, &settings(RankCriterion::PosPlusNeg)).unwrap();
            // Recover orders and hinge arguments from an inference-style pass.
            let v = m.encode_images(g, p, &images).unwrap();
            let roles = m.encode_language(g, p, &group.expression).unwrap();
            let main = m.branch(g, p, &v, roles, RankCriterion::PosPlusNeg, 3, true).unwrap();
            let mirror = m.branch(g, p, &v, roles.swapped(), RankCriterion::PosPlusNeg, 3, false).unwrap();
            let lp = g.value(roles.query).data().to_vec();
            let la = g.value(roles.anti).data().to_vec();
            let hinges = main
                .embeddings
                .iter()
                .zip(&group.images)
                .map(|(&e, r)| {
                    let e = g.value(e).data();
                    let d = |b: &[f64]| e.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    let gap = d(&lp) - d(&la);
                    if r.is_positive { gap + 1.0 } else { 1.0 - gap }
                })
                .collect();
            (obj.total, vec![main.order, mirror.order], hinges)
        };
        let fns: [&LossFn; 3] = [&ce, &mirror, &composite];
        for (slot, f) in fns.iter().enumerate() {
            let (w, c, s) = check_param_grads(&model, &mut rng, 25, f)?;
            worst[slot] = worst[slot].max(w);
            counts[slot].0 += c;
            counts[slot].1 += s;
        }
    }
    for (name, (w, (c, s))) in ["ce", "mirror_ce", "composite"].iter().zip(worst.iter().zip(counts)) {
        ensure(*w <= REL_TOL, || format!("{name} rel err {w:e}"))?;
        ensure(c >= 50, || format!("{name}: only {c} parameters checked ({s} skipped)"))?;
        lines.push(format!("{name} {w:.1e} ({c} params, {s} skipped)"));
    }
    lines.push(format!("ce on logits {worst_logit:.1e}"));
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- criterion 3

fn rec(gt: bool, pred: bool, iou: f64) -> EvalRecord {
    EvalRecord::new("g", "i", gt, pred, iou, 0.0, 0.0)
}

fn oracle_f_curve(pair: &SaliencyPair) -> Vec<f64> {
    (1..=255)
        .map(|k| {
            let thr = k as f64 / 255.0;
            let (mut tp, mut pp, mut gp) = (0.0, 0.0, 0.0);
            for i in 0..pair.pred.len() {
                let p = pair.pred[i] >= thr;
                let g = pair.gt[i] != 0;
                if p && g {
                    tp += 1.0;
                }
                if p {
                    pp += 1.0;
                }
                if g {
                    gp += 1.0;
                }
            }
            let prec = if pp > 0.0 { tp / pp } else { 0.0 };
            let rec = if gp > 0.0 { tp / gp } else { 0.0 };
            if 0.3 * prec + rec > 0.0 {
                1.3 * prec * rec / (0.3 * prec + rec)
            } else {
                0.0
            }
        })
        .collect()
}

fn criterion_3() -> Check {
    let hand = adapted_miou(&[rec(true, true, 0.5), rec(false, false, 0.0), rec(false, true, 0.0), rec(true, false, 0.0)])
        .map_err(|e| e.to_string())?;
    ensure(hand == 0.375, || format!("confusion case gave {hand}"))?;
    let all_tn = adapted_miou(&vec![rec(false, false, 0.0); 5]).unwrap();
    ensure(all_tn == 1.0, || format!("all-TN gave {all_tn}"))?;
    let mixed = adapted_miou(&[rec(true, true, 0.8), rec(true, true, 0.4), rec(false, false, 0.0), rec(true, false, 0.0)]).unwrap();
    ensure((mixed - 0.55).abs() < 1e-15, || format!("mixed case gave {mixed}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_collapse = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let records: Vec<EvalRecord> = (0..n).map(|_| rec(true, true, rng.gen())).collect();
        let a = adapted_miou(&records).unwrap();
        let v = vanilla_miou(&records).unwrap();
        worst_collapse = worst_collapse.max((a - v).abs());
    }
    ensure(worst_collapse <= 1e-12, || format!("adapted vs vanilla differ by {worst_collapse:e}"))?;

    let (mut worst_mae, mut worst_f) = (0.0f64, 0.0f64);
    let mut pairs = Vec::new();
    for inst in 0..150 {
        let (h, w) = (8, 8);
        let pred: Vec<f64> = (0..h * w)
            .map(|_| if inst % 5 == 0 { f64::from(rng.gen_range(0u8..=255)) / 255.0 } else { rng.gen() })
            .collect();
        let gt: Vec<u8> = (0..h * w).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        let pair = SaliencyPair::new(h, w, pred, gt).map_err(|e| e.to_string())?;
        let oracle_mae = pair.pred.iter().zip(&pair.gt).map(|(p, &g)| (p - f64::from(g)).abs()).sum::<f64>() / 64.0;
        worst_mae = worst_mae.max((mae(&pair) - oracle_mae).abs());
        worst_f = worst_f.max(max_diff(&f_measure_curve(&pair), &oracle_f_curve(&pair)));
        pairs.push(pair);
    }
    let oracle_curves: Vec<Vec<f64>> = pairs.iter().map(oracle_f_curve).collect();
    let oracle_fmax = (0..255)
        .map(|t| oracle_curves.iter().map(|c| c[t]).sum::<f64>() / pairs.len() as f64)
        .fold(f64::MIN, f64::max);
    let oracle_mean_mae = pairs.iter().map(mae).sum::<f64>() / pairs.len() as f64;
    let sod = sod_metrics(&pairs).map_err(|e| e.to_string())?;
    let fmax_diff = (sod.f_max - oracle_fmax).abs();
    worst_mae = worst_mae.max((sod.mae - oracle_mean_mae).abs());
    ensure(worst_mae <= 1e-6, || format!("MAE diff {worst_mae:e}"))?;
    ensure(worst_f <= 1e-6 && fmax_diff <= 1e-6, || format!("F diff {worst_f:e}, F_max diff {fmax_diff:e}"))?;
    Ok(format!(
        "confusion cases exact; adapted=vanilla within {worst_collapse:.1e}; MAE {worst_mae:.1e}, F curve {worst_f:.1e}, F_max {fmax_diff:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let m = 1.0;
    let (mut positives, mut negatives) = (0, 0);
    for t in 0..1000 {
        let c = rng.gen_range(1..10);
        let scale = rng.gen_range(0.1..3.0);
        let e = GroupEmbedding { e: rand_vec(&mut rng, c).iter().map(|x| x * scale).collect() };
        let lp = ProjectedLanguage { lp: rand_vec(&mut rng, c) };
        let la = ProjectedLanguage { lp: rand_vec(&mut rng, c) };
        let d = decide(&e, &lp, &la, m).map_err(|e| e.to_string())?;
        let dist = |b: &[f64]| e.e.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let (dp, dn) = (dist(&lp.lp), dist(&la.lp));
        ensure((d.d_pos - dp).abs() <= 1e-12 && (d.d_neg - dn).abs() <= 1e-12, || format!("distances differ on triple {t}"))?;
        ensure(d.is_positive == (dp + m < dn), || format!("strict rule violated on triple {t}"))?;
        if d.is_positive {
            positives += 1;
        } else {
            negatives += 1;
        }
        let delta = rng.gen_range(0.0..2.0);
        let more_neg = Decision::from_distances(d.d_pos, d.d_neg + delta, m);
        ensure(!d.is_positive || more_neg.is_positive, || format!("raising d_neg flipped triple {t} to negative"))?;
        let more_pos = Decision::from_distances(d.d_pos + delta, d.d_neg, m);
        ensure(d.is_positive || !more_pos.is_positive, || format!("raising d_pos flipped triple {t} to positive"))?;
        let equal = Decision::from_distances(dp, dp, m);
        ensure(!equal.is_positive, || "equidistant embedding decided positive".into())?;

        let logits = rand_tensor(&mut rng, &[3, 4]).map(|x| 5.0 * x);
        let mask = emit_mask(&logits, &d);
        if !d.is_positive {
            ensure(mask.iter().all(|&b| b == 0), || format!("negative triple {t} emitted a nonzero mask"))?;
        } else {
            let expected: Vec<u8> = logits.data().iter().map(|&x| u8::from(x > 0.0)).collect();
            ensure(mask == expected, || format!("positive triple {t} mask not thresholded at 0"))?;
        }
    }
    ensure(positives > 0 && negatives > 0, || "random triples did not cover both outcomes".into())?;

    // End to end through the model: negative decisions never leak decoder output.
    let mut model_negatives = 0;
    for seed in 0..10 {
        let (model, groups) = tiny_model(seed);
        for group in &groups {
            let images: Vec<Tensor> = group.images.iter().map(|r| r.to_tensor()).collect();
            let out = model
                .infer(&images, &group.expression, RankCriterion::PosPlusNeg, 0)
                .map_err(|e| e.to_string())?;
            for r in out.iter().filter(|r| !r.decision.is_positive) {
                model_negatives += 1;
                ensure(r.mask.iter().all(|&b| b == 0), || "model emitted a nonzero mask for a negative".into())?;
            }
        }
    }
    Ok(format!(
        "1000 triples ({positives} positive, {negatives} negative); {model_negatives} model negatives all zero-masked"
    ))
}

// ------------------------------------------------------- criteria 5, 6 and 7

struct DeskRun {
    report: EvalReport,
    json: String,
    model: GresModel,
    train_groups: Vec<GroupSample>,
    test_groups: Vec<GroupSample>,
    vocab: Vocab,
    elapsed: Duration,
}

/// generate → write to disk → load → train → evaluate → serialize.
fn desk_run(config: &RunConfig, dir: &Path) -> Result<DeskRun, String> {
    let start = Instant::now();
    let (train_split, test_split) = synthetic_splits(config).map_err(|e| e.to_string())?;
    write_corpus(&train_split, &dir.join("train")).map_err(|e| e.to_string())?;
    write_corpus(&test_split, &dir.join("test")).map_err(|e| e.to_string())?;
    let (manifest, train_groups) = load_split(&dir.join("train")).map_err(|e| e.to_string())?;
    let (_, test_groups) = load_split(&dir.join("test")).map_err(|e| e.to_string())?;
    let vocab = Vocab::from(manifest.vocab);
    let model = train(config, vocab.clone(), &train_groups, &mut |_| {}).map_err(|e| e.to_string())?;
    let report = evaluate(&model, &test_groups, config.test_criterion(), config.seed).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        report,
        json,
        model,
        train_groups,
        test_groups,
        vocab,
        elapsed: start.elapsed(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("null".into(), |x| format!("{x:.4}"))
}

fn criterion_5(run: &DeskRun) -> Check {
    let r = &run.report;
    let r_neg = r.r_neg.unwrap_or(f64::NAN);
    let tp = r.records.iter().filter(|x| x.category == Category::TP).count();
    let fneg = r.records.iter().filter(|x| x.category == Category::FN).count();
    let detail = format!(
        "miou_bar={:.4} r_neg={} miou={} (TP {tp}, FN {fneg}) in {:.0}s",
        r.miou_bar,
        fmt_opt(r.r_neg),
        fmt_opt(r.miou),
        run.elapsed.as_secs_f64()
    );
    ensure(r.miou_bar >= 0.70, || format!("{detail}: miou_bar below 0.70"))?;
    ensure(r_neg >= 80.0, || format!("{detail}: r_neg below 80"))?;
    ensure(run.elapsed < Duration::from_secs(15 * 60), || format!("{detail}: over 15 minutes"))?;
    Ok(detail)
}

fn criterion_6(base: &RunConfig, full: &DeskRun) -> Check {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    let eval = |config: &RunConfig, train_groups: &[GroupSample], test_groups: &[GroupSample]| -> Result<EvalReport, String> {
        let model = train(config, full.vocab.clone(), train_groups, &mut |_| {}).map_err(|e| e.to_string())?;
        evaluate(&model, test_groups, config.test_criterion(), config.seed).map_err(|e| e.to_string())
    };

    // (a) without the triplet loss nothing is ever declared negative.
    let mut no_tri = base.clone();
    no_tri.use_triplet = false;
    let r = eval(&no_tri, &full.train_groups, &full.test_groups)?;
    parts.push(format!("(a) w/o TriLoss r_neg={}", fmt_opt(r.r_neg)));
    if r.r_neg != Some(0.0) {
        failures.push("(a)");
    }

    // (b) the query stage helps.
    let mut no_tqm = base.clone();
    no_tqm.use_tqm = false;
    let r = eval(&no_tqm, &full.train_groups, &full.test_groups)?;
    parts.push(format!("(b) full {:.6} > w/o TQM {:.6}", full.report.miou_bar, r.miou_bar));
    if full.report.miou_bar <= r.miou_bar {
        failures.push("(b)");
    }

    // (c) larger groups do not hurt. N=4 is the full run; smaller sizes
    // regroup the same images, still one group per update.
    let mut by_n = Vec::new();
    for n in [1usize, 2] {
        let mut config = base.clone();
        config.group_size = n;
        let tr = regroup_samples(&full.train_groups, n).map_err(|e| e.to_string())?;
        let te = regroup_samples(&full.test_groups, n).map_err(|e| e.to_string())?;
        by_n.push((n, eval(&config, &tr, &te)?.miou_bar));
    }
    by_n.push((base.group_size, full.report.miou_bar));
    parts.push(format!(
        "(c) {}",
        by_n.iter().map(|(n, m)| format!("N={n}:{m:.6}")).collect::<Vec<_>>().join(" ")
    ));
    if by_n.windows(2).any(|w| w[1].1 < w[0].1) {
        failures.push("(c)");
    }

    // (d) matched ranking at test time beats a random order, same model.
    let matched = full.report.miou_bar;
    let random = evaluate(&full.model, &full.test_groups, RankCriterion::Random, base.seed)
        .map_err(|e| e.to_string())?
        .miou_bar;
    parts.push(format!("(d) pos_plus_neg {matched:.6} >= random {random:.6}"));
    if matched < random {
        failures.push("(d)");
    }

    let detail = parts.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} failed: {detail}", failures.join(" ")))
    }
}

fn criterion_7(config: &RunConfig, first: &DeskRun) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = desk_run(config, dir.path())?;
    ensure(first.json.as_bytes() == second.json.as_bytes(), || {
        "second generate/train/eval run produced a different report".into()
    })?;
    Ok(format!("{} report bytes identical across two runs", first.json.len()))
}

// ----------------------------------------------------------------------- main

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut failed = Vec::new();
    let mut record = |k: u32, name: &str, start: Instant, outcome: Check| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {k} ({name}, {secs:.1}s): {d}"),
            Err(d) => {
                println!("FAIL criterion {k} ({name}, {secs:.1}s): {d}");
                failed.push(k);
            }
        }
    };

    let quick: [(u32, &str, fn() -> Check); 4] = [
        (1, "kernel oracles", criterion_1),
        (2, "gradients", criterion_2),
        (3, "metrics", criterion_3),
        (4, "decision rule", criterion_4),
    ];
    for (k, name, f) in quick {
        if wants(k) {
            let start = Instant::now();
            record(k, name, start, f());
        }
    }

    if wants(5) || wants(6) || wants(7) {
        let config = RunConfig::default();
        let start = Instant::now();
        let dir = tempfile::tempdir().expect("temp dir");
        match desk_run(&config, dir.path()) {
            Ok(full) => {
                if wants(5) {
                    record(5, "desk-scale run", start, criterion_5(&full));
                }
                if wants(6) {
                    let start = Instant::now();
                    record(6, "ablation directions", start, criterion_6(&config, &full));
                }
                if wants(7) {
                    let start = Instant::now();
                    record(7, "determinism", start, criterion_7(&config, &full));
                }
            }
            Err(e) => {
                for (k, name) in [(5, "desk-scale run"), (6, "ablation directions"), (7, "determinism")] {
                    if wants(k) {
                        record(k, name, start, Err(format!("desk run failed: {e}")));
                    }
                }
            }
        }
    }

    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
