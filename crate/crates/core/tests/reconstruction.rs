use edgeinv::inference::{Method, ReconstructOptions, Tolerance};
use edgeinv::io::{fasta, newick};
use edgeinv::tensor::matrix_rank;
use edgeinv::{
    empirical_tensor, enumerate_trivalent_topologies, flatten, joint_distribution, no_mutation_presentation,
    random_presentation, reconstruct_by_splits, reconstruct_exhaustive, sample_alignment, ModelKind, PatternTensor,
    TreeTopology, Warning,
};

fn simulate(kind: ModelKind, tree: &TreeTopology, seed: u64) -> PatternTensor {
    joint_distribution(&random_presentation(kind.model(), tree, seed, 10.0).unwrap()).unwrap()
}

#[test]
fn exhaustive_and_split_paths_agree() {
    let opts = ReconstructOptions::default();
    for n in 4..=6 {
        let trees = enumerate_trivalent_topologies(n).unwrap();
        for kind in ModelKind::ALL {
            for seed in 0..100u64 {
                let tree = &trees[(seed as usize * 7) % trees.len()];
                let psi = simulate(kind, tree, 100 * n as u64 + seed);
                let a = reconstruct_exhaustive(&psi, kind.model(), &opts).unwrap();
                let b = reconstruct_by_splits(&psi, kind.model(), &opts).unwrap();
                assert_eq!(a.tree.as_ref(), Some(tree), "exhaustive {kind} n={n} seed={seed}");
                assert_eq!(b.tree.as_ref(), Some(tree), "splits {kind} n={n} seed={seed}");
                assert!(a.is_confident() && b.is_confident(), "{kind} n={n} seed={seed}");
            }
        }
    }
}

#[test]
fn accuracy_grows_with_alignment_length() {
    let tree = newick::parse("((1,2),(3,4));").unwrap().tree;
    let opts = ReconstructOptions { tol: Tolerance::DataDriven, ..Default::default() };
    for kind in [ModelKind::K81, ModelKind::Gmm] {
        let mut accuracy = Vec::new();
        for sites in [1_000u64, 10_000, 100_000] {
            let hits = (0..100u64)
                .filter(|&seed| {
                    let psi = simulate(kind, &tree, 300 + seed);
                    let emp = empirical_tensor(&sample_alignment(&psi, sites, 900 + seed).unwrap()).unwrap();
                    reconstruct_exhaustive(&emp, kind.model(), &opts).unwrap().tree.as_ref() == Some(&tree)
                })
                .count();
            accuracy.push(hits);
        }
        assert!(accuracy.windows(2).all(|w| w[0] <= w[1]), "{kind}: {accuracy:?}");
        assert!(accuracy[2] >= 99, "{kind}: {accuracy:?}");
    }
}

// E|X/N - p| summed over cells, from the normal approximation to the binomial.
fn expected_l1(psi: &PatternTensor, sites: u64) -> f64 {
    (2.0 / (std::f64::consts::PI * sites as f64)).sqrt() * psi.values().iter().map(|p| p.sqrt()).sum::<f64>()
}

#[test]
fn empirical_tensor_converges() {
    let tree = newick::parse("((1,2),(3,4));").unwrap().tree;
    let psi = simulate(ModelKind::K81, &tree, 0);
    // averaged over seeds; at 1e6 sites the expected L1 of a quartet tensor
    // is already close to 0.01, so only the oracle gives a stable bound
    let mean_l1 = |sites: u64| {
        (0..20u64)
            .map(|s| empirical_tensor(&sample_alignment(&psi, sites, 50 + s).unwrap()).unwrap().l1_distance(&psi))
            .sum::<f64>()
            / 20.0
    };
    let big = mean_l1(1_000_000);
    assert!(big < 0.011, "mean L1 {big}");
    let (small, large) = (mean_l1(10_000), mean_l1(100_000));
    let ratio = large / small;
    assert!((0.2..=0.5).contains(&ratio), "ratio {ratio}");
    for (sites, got) in [(10_000, small), (100_000, large), (1_000_000, big)] {
        let r = got / expected_l1(&psi, sites);
        assert!((0.9..1.1).contains(&r), "{sites} sites: {got} vs {}", expected_l1(&psi, sites));
    }
}

#[test]
fn fasta_fixture_is_close_to_its_source() {
    let tree = newick::parse("((1,2),(3,4));").unwrap().tree;
    let psi = simulate(ModelKind::Jc69, &tree, 21);
    let text = fasta::write(&sample_alignment(&psi, 1000, 22).unwrap());
    let emp = empirical_tensor(&fasta::read(&text, fasta::Ambiguity::Error).unwrap()).unwrap();
    // 1000 sites over 256 patterns: multinomial noise alone puts L1 near 0.3
    let l1 = emp.l1_distance(&psi);
    assert!(l1 < 1.25 * expected_l1(&psi, 1000), "L1 {l1} vs {}", expected_l1(&psi, 1000));
    let res = reconstruct_exhaustive(&emp, ModelKind::Jc69.model(), &ReconstructOptions {
        tol: Tolerance::DataDriven,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(res.tree, Some(tree));
}

#[test]
fn no_mutation_flattenings_have_rank_four() {
    for n in 4..=6 {
        let tree = &enumerate_trivalent_topologies(n).unwrap()[0];
        let psi = joint_distribution(&no_mutation_presentation(ModelKind::Gmm.model(), tree).unwrap()).unwrap();
        for split in edgeinv::trees::nontrivial_bipartitions(n) {
            assert_eq!(matrix_rank(&flatten(&psi, &split).unwrap(), 1e-9), 4);
        }
        let res = reconstruct_exhaustive(&psi, ModelKind::Gmm.model(), &Default::default()).unwrap();
        assert!(res.candidates.iter().all(|c| c.pass));
        assert!(res.warnings.iter().any(|w| matches!(w, Warning::NoUniquePass { .. })));
    }
}

#[test]
fn eight_and_ten_leaves_by_splits() {
    let opts = ReconstructOptions { method: Some(Method::Splits), ..Default::default() };
    for (n, text) in [
        (8, "((1,2),((3,4),(5,6)),(7,8));"),
        (10, "(((1,2),3),((4,5),(6,7)),((8,9),10));"),
    ] {
        let tree = newick::parse(text).unwrap().tree;
        let psi = simulate(ModelKind::K81, &tree, n as u64);
        let res = edgeinv::inference::reconstruct(&psi, ModelKind::K81.model(), &opts).unwrap();
        assert_eq!(res.tree.as_ref(), Some(&tree), "n={n}");
        assert_eq!(res.chosen_splits.len(), n - 3);
        assert!(res.chosen_splits.iter().all(|s| s.score <= 1e-8));
    }
}

#[test]
fn mixtures_never_answer_silently() {
    let trees = enumerate_trivalent_topologies(5).unwrap();
    let model = ModelKind::Ssm.model();
    for seed in 0..10u64 {
        let a = simulate(ModelKind::Ssm, &trees[0], seed);
        let b = simulate(ModelKind::Ssm, &trees[9], seed + 100);
        let mix: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mix = PatternTensor::new(5, 4, mix).unwrap().into_stochastic().unwrap();
        let res = reconstruct_by_splits(&mix, model, &Default::default()).unwrap();
        assert!(!res.is_confident() && !res.warnings.is_empty(), "seed {seed}: {:?}", res.tree);
    }
}
