use edgeinv::trees::nontrivial_bipartitions;
use edgeinv::{
    edge_invariant_test, enumerate_trivalent_topologies, joint_distribution, model_fit_score, random_presentation,
    split_score, ModelKind, PatternTensor, TreeTopology,
};

fn simulate(kind: ModelKind, tree: &TreeTopology, seed: u64) -> PatternTensor {
    joint_distribution(&random_presentation(kind.model(), tree, seed, 10.0).unwrap()).unwrap()
}

#[test]
fn edge_splits_score_zero_up_to_seven_leaves() {
    for n in 4..=7 {
        let trees = enumerate_trivalent_topologies(n).unwrap();
        for kind in ModelKind::ALL {
            for seed in 0..4u64 {
                let tree = &trees[(seed as usize * 31) % trees.len()];
                let psi = simulate(kind, tree, seed);
                for split in tree.interior_splits() {
                    let s = split_score(&psi, &split, kind.model()).unwrap().score;
                    assert!(s <= 1e-9, "{kind} n={n} {split}: {s}");
                }
            }
        }
    }
}

#[test]
fn off_splits_score_positive() {
    let quartets = enumerate_trivalent_topologies(4).unwrap();
    for kind in ModelKind::ALL {
        let mut positive = 0;
        let mut separated = 0;
        for seed in 0..100u64 {
            let tree = &quartets[(seed % 3) as usize];
            let psi = simulate(kind, tree, 500 + seed);
            let edge = tree.interior_splits()[0];
            let off: Vec<f64> = nontrivial_bipartitions(4)
                .into_iter()
                .filter(|s| *s != edge)
                .map(|s| split_score(&psi, &s, kind.model()).unwrap().score)
                .collect();
            positive += off.iter().all(|&s| s > 0.0) as usize;
            for wrong in quartets.iter().filter(|t| *t != tree) {
                let report = edge_invariant_test(&psi, wrong, kind.model(), 1e-8).unwrap();
                separated += (!report.pass && report.max_score() > 1e-5) as usize;
            }
        }
        assert!(positive >= 99, "{kind}: {positive}");
        assert!(separated >= 198, "{kind}: {separated}");
    }
}

#[test]
fn gmm_data_does_not_fit_jukes_cantor() {
    let quartets = enumerate_trivalent_topologies(4).unwrap();
    for seed in 0..100u64 {
        let psi = simulate(ModelKind::Gmm, &quartets[(seed % 3) as usize], 700 + seed);
        assert!(model_fit_score(&psi, ModelKind::Jc69.model()).unwrap() > 0.01, "seed {seed}");
        assert!(model_fit_score(&psi, ModelKind::Gmm.model()).unwrap() < 1e-15);
    }
}
