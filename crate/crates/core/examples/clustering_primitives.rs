//! The clustering building blocks on their own: on-arrival assignment,
//! client feedback, expansion candidates and the attention merge.

use apfl::clustering::{
    compute_feedback, expansion_candidates, init_or_assign, merge_centers, symmetric_kl, ClusterState,
};
use apfl::data::{generate_population, PopulationSpec};
use apfl::model::{LocalDataset, Mlp, SgdConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> apfl::Result<()> {
    let spec = PopulationSpec::disjoint(4, 3, 10, 3);
    let pop = generate_population(&spec)?;
    let mlp = Mlp::new(spec.feature_dim, 16, spec.classes);
    let init = mlp.init(&mut ChaCha8Rng::seed_from_u64(3));
    let sgd = SgdConfig { epochs: 3, ..SgdConfig::default() };

    // every client trains from the same start; uploads arrive one group at a time
    let mut order: Vec<usize> = (0..pop.datasets.len()).collect();
    order.sort_by_key(|&c| (c % 3, c));
    let mut clusters: Vec<ClusterState> = Vec::new();
    let mut next = 0;
    for client in order {
        let local = mlp.sgd_train(&init, &pop.datasets[client], &sgd, client as u64)?;
        let id = init_or_assign(&mut clusters, &mut next, client, &local, 4, client as f64)?;
        println!("client {client:>2} (group {}) -> cluster {id}", pop.ground_truth[client]);
    }

    // feedback of each member on its own cluster center
    for k in &clusters {
        let scores: Vec<(usize, f64)> = k
            .members
            .iter()
            .map(|&c| compute_feedback(&mlp, &k.center, &pop.datasets[c]).map(|f| (c, f.score)))
            .collect::<apfl::Result<_>>()?;
        let shown: Vec<String> = scores.iter().map(|(c, s)| format!("{c}:{s:.3}")).collect();
        println!(
            "cluster {} feedback [{}], would split off {:?}",
            k.id,
            shown.join(" "),
            expansion_candidates(&scores, 0.2)
        );
    }

    // how far apart the first two centers predict, and their merge
    let probe = LocalDataset::concat(&pop.datasets)?;
    let (a, b) = (&clusters[0], &clusters[1]);
    println!("symmetric KL between clusters 0 and 1: {:.3}", symmetric_kl(&mlp, &a.center, &b.center, &probe));
    let posterior = &pop.datasets[*a.members.iter().next().expect("non-empty cluster")];
    let merged = merge_centers(&mlp, &a.center, &b.center, posterior, &sgd, 9)?;
    let moved = merged.values().iter().zip(a.center.values()).filter(|(m, c)| m != c).count();
    println!("merge moved {moved} of {} weights toward the auxiliary center", merged.len());
    Ok(())
}
