use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph_state::{Action, MaskVariant};
use crate::instance::{
    example_instance, generate_instance, parse_instance, GenParams, Instance, Job,
};

fn small(hidden: usize, layers: usize) -> PolicyConfig {
    PolicyConfig {
        layers,
        hidden,
        mask: MaskRule::unrestricted(),
    }
}

fn example_state() -> GraphState {
    GraphState::new(Arc::new(example_instance()))
}

#[test]
fn zero_weights_give_zero_embeddings_uniform_actor_and_zero_value() {
    let p = Policy::zeros(small(8, 2)).unwrap();
    let s = example_state();
    let (o, m, j) = p.embed(&s).unwrap();
    for t in [o, m, j] {
        assert!(t.data().iter().all(|&x| x == 0.0));
    }
    let mask = vec![true; s.legal_actions().len()];
    let (probs, value) = p.evaluate(&s, &mask).unwrap();
    for pr in &probs {
        assert!((pr - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(value, 0.0);
}

#[test]
fn attention_coefficients_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Policy::new(small(6, 2), &mut rng).unwrap();
    let s = example_state();
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let emb = p.embed_on(&mut tape, &vars, &s.graph()).unwrap();
    assert_eq!(emb.attention.len(), 14);
    for rec in &emb.attention {
        let alpha = tape.value(rec.alpha).data();
        let n = rec.dst.iter().max().unwrap() + 1;
        let mut sums = vec![0.0; n];
        for (a, &d) in alpha.iter().zip(&rec.dst) {
            assert!(*a > 0.0);
            sums[d] += a;
        }
        for (d, total) in sums.iter().enumerate() {
            if rec.dst.contains(&d) {
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "{:?} node {d}: {total}",
                    rec.relation
                );
            }
        }
    }
}

#[test]
fn attention_score_identities_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = Policy::new(small(5, 2), &mut rng).unwrap();
    // layer 1 relations map hidden -> hidden, so 5-dim inputs everywhere
    let rp = p.relation_params(1, Relation::OpMachine);
    let hi: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let hj: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let he: Vec<f64> = (0..OM_FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let zero_a = Tensor::zeros(5, 1);
    let zeroed = RelationParams { a: &zero_a, ..rp };
    assert_eq!(attention_score(zeroed, &hi, &hj, Some(&he)).unwrap(), 0.0);

    let got = attention_score(rp, &hi, &hj, Some(&he)).unwrap();
    let mut oracle = 0.0;
    for c in 0..5 {
        let mut s = 0.0;
        for r in 0..5 {
            s += hi[r] * rp.w1.get(r, c) + hj[r] * rp.w2.get(r, c);
        }
        for (r, e) in he.iter().enumerate() {
            s += e * rp.w3.unwrap().get(r, c);
        }
        let act = if s > 0.0 { s } else { 0.2 * s };
        oracle += rp.a.get(c, 0) * act;
    }
    assert!((got - oracle).abs() < 1e-12);

    let mm = p.relation_params(1, Relation::MachineMachine);
    let tied = RelationParams { w2: mm.w1, ..mm };
    let same = attention_score(tied, &hi, &hi, None).unwrap();
    let twice: Vec<f64> = hi.iter().map(|x| 2.0 * x).collect();
    let zero = Tensor::zeros(5, 5);
    let single = RelationParams { w2: &zero, ..tied };
    assert!((same - attention_score(single, &twice, &hi, None).unwrap()).abs() < 1e-12);

    assert!(attention_score(rp, &hi, &hj, None).is_err());
    assert!(attention_score(rp, &hi[..3], &hj, Some(&he)).is_err());
}

fn permute_jobs(inst: &Instance, perm: &[usize]) -> Instance {
    let jobs: Vec<Job> = perm.iter().map(|&j| inst.jobs[j].clone()).collect();
    Instance::new(inst.id.clone(), inst.num_machines, jobs).unwrap()
}

#[test]
fn job_embeddings_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = Policy::new(small(6, 2), &mut rng).unwrap();
    let gen = GenParams {
        j_min: 3,
        j_max: 5,
        m_min: 2,
        m_max: 3,
        o_min: 1,
        o_max: 3,
        ..GenParams::default()
    };
    for _ in 0..10 {
        let inst = generate_instance(&gen, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..inst.num_jobs()).collect();
        perm.reverse();
        perm.rotate_left(1);
        let permuted = permute_jobs(&inst, &perm);
        let (_, m1, j1) = p.embed(&GraphState::new(Arc::new(inst))).unwrap();
        let (_, m2, j2) = p.embed(&GraphState::new(Arc::new(permuted))).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for (a, b) in j2.row(new).iter().zip(j1.row(old)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        for (a, b) in m1.data().iter().zip(m2.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn masked_action_has_exactly_zero_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = PolicyConfig {
        mask: MaskRule::new(MaskVariant::EarliestFinish, 1),
        ..small(8, 2)
    };
    let p = Policy::new(cfg, &mut rng).unwrap();
    let s = example_state();
    let actions = s.legal_actions();
    let mask = p.mask_for(&s);
    let (probs, _) = p.evaluate(&s, &mask).unwrap();
    let idx = actions
        .iter()
        .position(|&a| a == Action::new(0, 1))
        .unwrap();
    assert!(!mask[idx]);
    assert_eq!(probs[idx], 0.0);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(probs.iter().zip(&mask).all(|(&pr, &m)| m == (pr > 0.0)));

    let none = vec![false; actions.len()];
    assert!(matches!(p.evaluate(&s, &none), Err(PolicyError::AllMasked)));
    assert!(matches!(
        p.evaluate(&s, &mask[..1]),
        Err(PolicyError::MaskLength { .. })
    ));
}

#[test]
fn critic_is_invariant_to_duplicating_jobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = Policy::new(small(6, 2), &mut rng).unwrap();
    let once = parse_instance("2 2\n2 1 1 5 1 2 3\n1 2 1 8 2 5\n").unwrap();
    let twice =
        parse_instance("4 2\n2 1 1 5 1 2 3\n1 2 1 8 2 5\n2 1 1 5 1 2 3\n1 2 1 8 2 5\n").unwrap();
    let v1 = p.critic_value(&GraphState::new(Arc::new(once))).unwrap();
    let v2 = p.critic_value(&GraphState::new(Arc::new(twice))).unwrap();
    assert!((v1 - v2).abs() < 1e-12, "{v1} vs {v2}");
}

#[test]
fn critic_matches_hand_mean_of_job_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = Policy::new(small(4, 1), &mut rng).unwrap();
    let s = example_state();
    let (_, _, jobs) = p.embed(&s).unwrap();
    let store = p.params();
    let get = |n: &str| store.get(store.index_of(n).unwrap());
    let (w1, b1, w2, b2) = (
        get("critic.w1"),
        get("critic.b1"),
        get("critic.w2"),
        get("critic.b2"),
    );
    let mut total = 0.0;
    for j in 0..jobs.rows() {
        let mut out = b2.item();
        for c in 0..4 {
            let mut z = b1.get(0, c);
            for r in 0..4 {
                z += jobs.get(j, r) * w1.get(r, c);
            }
            out += z.tanh() * w2.get(c, 0);
        }
        total += out;
    }
    let expected = total / jobs.rows() as f64;
    assert!((p.critic_value(&s).unwrap() - expected).abs() < 1e-12);
}

/// Central-difference check of every parameter of `p` for a loss built by `f`.
fn fd_all_params(p: &Policy, f: &dyn Fn(&Policy, &mut Tape, &[Var]) -> Var, tol: f64) {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let loss = f(p, &mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut analytic = p.params().zeros_like();
    grads.accumulate_params(&mut analytic, 1.0);
    let eval = |q: &Policy| {
        let mut t = Tape::new();
        let v = q.bind(&mut t);
        let l = f(q, &mut t, &v);
        t.value(l).item()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p.params().len() {
        for k in 0..p.params().get(i).len() {
            let mut plus = p.clone();
            plus.params_mut().get_mut(i).data_mut()[k] += h;
            let mut minus = p.clone();
            minus.params_mut().get_mut(i).data_mut()[k] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i].data()[k];
            let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(1e-7);
            worst = worst.max(rel);
            assert!(
                rel < tol,
                "{}[{k}]: analytic {a} numeric {numeric}",
                p.params().name(i)
            );
        }
    }
    assert!(worst < tol);
}

#[test]
fn layer_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let p = Policy::new(small(4, 1), &mut rng).unwrap();
    let s = example_state();
    let graph = s.graph();
    let weights: Vec<Tensor> = [(3, 4), (2, 4), (2, 4)]
        .iter()
        .map(|&(r, c)| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    fd_all_params(
        &p,
        &|q, tape, vars| {
            let emb = q.embed_on(tape, vars, &graph).unwrap();
            let mut total = None;
            for (v, w) in [emb.op, emb.machine, emb.job].into_iter().zip(&weights) {
                let w = tape.constant(w.clone());
                let prod = tape.mul(v, w).unwrap();
                let s = tape.sum(prod);
                total = Some(match total {
                    Some(t) => tape.add(t, s).unwrap(),
                    None => s,
                });
            }
            total.unwrap()
        },
        1e-4,
    );
}

#[test]
fn end_to_end_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cfg = PolicyConfig {
        mask: MaskRule::new(MaskVariant::EarliestStart, 1),
        ..small(4, 2)
    };
    let p = Policy::new(cfg, &mut rng).unwrap();
    let mut s = GraphState::new(Arc::new(
        parse_instance("2 2\n2 2 1 4 2 6 1 2 3\n2 2 1 2 2 5 2 1 4 2 2\n").unwrap(),
    ));
    s.step(Action::new(0, 1)).unwrap();
    let mask = p.mask_for(&s);
    let chosen = mask.iter().position(|&m| m).unwrap();
    fd_all_params(
        &p,
        &|q, tape, vars| {
            let heads = q.forward(tape, vars, &s, &mask).unwrap();
            let lp = tape.pick(heads.log_probs, chosen).unwrap();
            let policy = tape.scale(lp, -0.7);
            let err = tape.add_scalar(heads.value, 1.3);
            let sq = tape.mul(err, err).unwrap();
            let value = tape.scale(sq, 0.5);
            tape.add(policy, value).unwrap()
        },
        1e-3,
    );
}

#[test]
fn from_params_rejects_wrong_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = Policy::new(small(4, 1), &mut rng).unwrap();
    let err = Policy::from_params(small(4, 2), p.params().clone()).unwrap_err();
    assert!(matches!(err, PolicyError::BadParameter(_)));
    assert!(Policy::zeros(small(0, 1)).is_err());
}
