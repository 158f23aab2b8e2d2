use fbprop_core::config::AttributeSchema;
use fbprop_core::graph::build_graph;
use fbprop_core::synth::{generate, SynthParams};

#[test]
fn default_profile_degree_band() {
    let schema = AttributeSchema::default();
    for seed in [0, 42] {
        let txs = generate(&SynthParams { rng_seed: seed, ..Default::default() }, &schema).unwrap();
        assert_eq!(txs.len(), 20_000);
        assert_eq!(txs.iter().filter(|t| t.is_fraud()).count(), 214);
        let stats = build_graph(txs, &schema).unwrap().stats();
        assert!((12.0..=18.0).contains(&stats.avg_degree), "seed {seed}: {}", stats.avg_degree);
        assert!(stats.hypernode_count > 0);
        assert_eq!(stats.hub_excluded_count, 0);
    }
}
