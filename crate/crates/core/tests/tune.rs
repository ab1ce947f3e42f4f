use tabkit::methods::Registry;
use tabkit::tune::{builtin_default, builtin_space, parse_space, sample_trial, Distribution, ModelConfig, SpaceLeaf};

fn within(dist: &Distribution, v: &serde_json::Value) -> bool {
    match dist {
        Distribution::Uniform { lo, hi } | Distribution::LogUniform { lo, hi } => {
            v.as_f64().is_some_and(|x| *lo <= x && x <= *hi)
        }
        Distribution::Int { lo, hi } => v.as_i64().is_some_and(|x| *lo <= x && x <= *hi),
        Distribution::Categorical(options) => options.contains(v),
        Distribution::MlpDLayers { n_min, n_max, w_min, w_max } => v.as_array().is_some_and(|a| {
            (*n_min as usize..=*n_max as usize).contains(&a.len())
                && a.iter().all(|w| w.as_i64().is_some_and(|w| *w_min <= w && w <= *w_max))
        }),
    }
}

#[test]
fn builtin_spaces_sample_within_bounds() {
    for name in Registry::builtin().names() {
        let space = parse_space(builtin_space(&name).unwrap()).unwrap();
        assert_eq!(space.model_name, name);
        assert_eq!(parse_space(&space.to_json()).unwrap(), space, "{name}");
        for seed in 0..500 {
            let trial = sample_trial(&space, seed);
            for (group, leaves) in &space.groups {
                let values = if group == "model" { &trial.model } else { &trial.training };
                for (key, leaf) in leaves {
                    let v = &values[key];
                    let ok = match leaf {
                        SpaceLeaf::Fixed(f) => v == f,
                        SpaceLeaf::Sample(d) => within(d, v),
                        SpaceLeaf::Optional { default, dist } => v == default || within(dist, v),
                    };
                    assert!(ok, "{name}.{group}.{key} = {v}");
                }
            }
        }
    }
}

#[test]
fn sampling_is_seeded() {
    let space = parse_space(builtin_space("gbdt").unwrap()).unwrap();
    assert_eq!(sample_trial(&space, 7), sample_trial(&space, 7));
    let distinct: std::collections::BTreeSet<String> =
        (0..20).map(|s| serde_json::to_string(&sample_trial(&space, s).to_value()).unwrap()).collect();
    assert!(distinct.len() > 1);
}

#[test]
fn default_configs_round_trip() {
    for name in Registry::builtin().names() {
        let c = ModelConfig::parse(builtin_default(&name).unwrap()).unwrap();
        assert_eq!(ModelConfig::from_value(&c.to_value()).unwrap(), c);
    }
}
