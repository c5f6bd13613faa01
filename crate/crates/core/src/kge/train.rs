use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingSet, Family, KgeError, TrainConfig};
use crate::autodiff::{Adam, Graph};
use crate::kg::{EntityId, Fact};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptMode {
    /// Head or tail with equal probability.
    Uniform,
    Head,
    Tail,
}

/// Replaces the head or tail with a different, uniformly chosen entity. No
/// filtering against known facts.
pub fn negative_sample<R: Rng>(fact: &Fact, n_entities: usize, mode: CorruptMode, rng: &mut R) -> Fact {
    let head = match mode {
        CorruptMode::Uniform => rng.gen_bool(0.5),
        CorruptMode::Head => true,
        CorruptMode::Tail => false,
    };
    let orig = if head { fact.head.0 } else { fact.tail.0 } as usize;
    let mut e = rng.gen_range(0..n_entities - 1);
    if e >= orig {
        e += 1;
    }
    let mut out = *fact;
    if head {
        out.head = EntityId(e as u32);
    } else {
        out.tail = EntityId(e as u32);
    }
    out
}

pub fn train(
    facts: &[Fact],
    n_entities: usize,
    n_relations: usize,
    family: Family,
    cfg: &TrainConfig,
) -> Result<EmbeddingSet, KgeError> {
    train_logged(facts, n_entities, n_relations, family, cfg).map(|(s, _)| s)
}

/// Trains one family on a fact list and returns the parameters together with
/// the mean loss of every epoch.
pub fn train_logged(
    facts: &[Fact],
    n_entities: usize,
    n_relations: usize,
    family: Family,
    cfg: &TrainConfig,
) -> Result<(EmbeddingSet, Vec<f64>), KgeError> {
    if facts.is_empty() {
        return Err(KgeError::EmptyGraph);
    }
    if n_entities < 2 {
        return Err(KgeError::TooFewEntities);
    }
    let mut set = EmbeddingSet::init(family, n_entities, n_relations, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..facts.len()).collect();
    let neg = cfg.negatives;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut heads = Vec::with_capacity(b * (1 + neg));
            let mut rels = Vec::with_capacity(b * (1 + neg));
            let mut tails = Vec::with_capacity(b * (1 + neg));
            for &i in chunk {
                heads.push(facts[i].head.0 as usize);
                rels.push(facts[i].relation.0 as usize);
                tails.push(facts[i].tail.0 as usize);
            }
            for &i in chunk {
                for _ in 0..neg {
                    let c = negative_sample(&facts[i], n_entities, CorruptMode::Uniform, &mut rng);
                    heads.push(c.head.0 as usize);
                    rels.push(c.relation.0 as usize);
                    tails.push(c.tail.0 as usize);
                }
            }
            let mut g = Graph::new();
            let scores = set.score_graph(&mut g, &heads, &rels, &tails)?;
            let pos = g.slice(scores, 0, 0, b)?;
            let negs = g.slice(scores, 0, b, b * (1 + neg))?;
            let loss = if family.is_distance() {
                let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat(i).take(neg)).collect();
                let pos_rep = g.gather(pos, &rep)?;
                let d = g.sub(negs, pos_rep)?;
                let d = g.add_scalar(d, cfg.margin);
                let h = g.relu(d);
                g.mean(h)
            } else {
                let np = g.neg(pos);
                let lp = g.softplus(np);
                let lp = g.mean(lp);
                let ln = g.softplus(negs);
                let ln = g.mean(ln);
                let mut loss = g.add(lp, ln)?;
                if cfg.l2 > 0.0 {
                    for id in set.entity_params() {
                        let rows = g.gather_param(&set.params, id, &heads)?;
                        let sq = g.square(rows);
                        let m = g.mean(sq);
                        let m = g.scale(m, cfg.l2);
                        loss = g.add(loss, m)?;
                    }
                }
                loss
            };
            total += g.value(loss).item() * b as f64;
            let grads = g.backward(loss)?;
            opt.step(&mut set.params, &grads);
            set.apply_constraints(false);
        }
        set.apply_constraints(true);
        history.push(total / facts.len() as f64);
    }
    Ok((set, history))
}
