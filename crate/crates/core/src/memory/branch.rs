use super::{ConceptMemory, MemoryBranch, PairQuery};
use crate::io::Gammas;
use crate::registry::Registry;

/// One knowledge source of the memory. Branches add their weighted logits
/// into a shared label-width buffer, so toggling a branch is a matter of
/// leaving it out or zeroing its gamma.
pub trait ScoreBranch: Send + Sync {
    fn name(&self) -> &'static str;
    fn weight(&self, gammas: &Gammas) -> f64;
    fn accumulate(&self, memory: &ConceptMemory, query: &PairQuery, weight: f64, out: &mut [f64]);
}

fn retrieve(branch: &MemoryBranch, q: &[f64], scale: f64, out: &mut [f64]) {
    for r in 0..branch.rows() {
        let affinity: f64 = branch.key(r).iter().zip(q).map(|(k, x)| *k as f64 * x).sum::<f64>() * scale;
        for (o, v) in out.iter_mut().zip(branch.value(r)) {
            if *v != 0.0 {
                *o += affinity * *v as f64;
            }
        }
    }
}

pub struct InstanceCentric;
pub struct InteractionAware;
pub struct Semantic;

impl ScoreBranch for InstanceCentric {
    fn name(&self) -> &'static str {
        "instance-centric"
    }

    fn weight(&self, g: &Gammas) -> f64 {
        g.ic
    }

    fn accumulate(&self, m: &ConceptMemory, q: &PairQuery, w: f64, out: &mut [f64]) {
        retrieve(&m.ic, &q.f_ic, w / m.temperature, out);
    }
}

impl ScoreBranch for InteractionAware {
    fn name(&self) -> &'static str {
        "interaction-aware"
    }

    fn weight(&self, g: &Gammas) -> f64 {
        g.ia
    }

    fn accumulate(&self, m: &ConceptMemory, q: &PairQuery, w: f64, out: &mut [f64]) {
        retrieve(&m.ia, &q.f_ia, w / m.temperature, out);
    }
}

impl ScoreBranch for Semantic {
    fn name(&self) -> &'static str {
        "semantic"
    }

    fn weight(&self, g: &Gammas) -> f64 {
        g.t
    }

    fn accumulate(&self, m: &ConceptMemory, q: &PairQuery, w: f64, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            let s: f64 = m.semantic_row(a).iter().zip(&q.f_u).map(|(r, x)| *r as f64 * x).sum();
            *o += w * s;
        }
    }
}

static IC: InstanceCentric = InstanceCentric;
static IA: InteractionAware = InteractionAware;
static SEM: Semantic = Semantic;

pub fn default_branches() -> [&'static dyn ScoreBranch; 3] {
    [&IC, &IA, &SEM]
}

/// Branches by name (`ic`, `ia`, `semantic` and their long forms).
pub fn branch_registry() -> Registry<dyn ScoreBranch> {
    Registry::<dyn ScoreBranch>::new("score branch")
        .with("ic", Box::new(InstanceCentric))
        .with("instance-centric", Box::new(InstanceCentric))
        .with("ia", Box::new(InteractionAware))
        .with("interaction-aware", Box::new(InteractionAware))
        .with("t", Box::new(Semantic))
        .with("semantic", Box::new(Semantic))
}
