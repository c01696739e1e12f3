//! Built-in experiment catalog: one ready-to-run configuration per
//! verification scenario the toolkit is expected to demonstrate.

pub struct Entry {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const CATALOG: [Entry; 12] = [
    Entry {
        name: "subordinator_duality",
        description: "killed subordinator against its frozen mirror, sampled side \
                      against the two-point closed form",
        toml: include_str!("../configs/subordinator_duality.toml"),
    },
    Entry {
        name: "cb_feller_duality",
        description: "square-mechanism branching process against the deterministic \
                      flow with the separated solution",
        toml: include_str!("../configs/cb_feller_duality.toml"),
    },
    Entry {
        name: "cbci_duality",
        description: "branching with immigration against the killed-flow closed form",
        toml: include_str!("../configs/cbci_duality.toml"),
    },
    Entry {
        name: "cbc_duality",
        description: "branching with quadratic competition against its diffusion \
                      mirror, both sides sampled",
        toml: include_str!("../configs/cbc_duality.toml"),
    },
    Entry {
        name: "cbre_duality",
        description: "branching in a random environment against its environment \
                      mirror, both sides sampled",
        toml: include_str!("../configs/cbre_duality.toml"),
    },
    Entry {
        name: "decomposable_duality",
        description: "two-pair decomposable system against its pairwise-swapped \
                      mirror, with explosion accounting",
        toml: include_str!("../configs/decomposable_duality.toml"),
    },
    Entry {
        name: "symbol_duality_grid",
        description: "transposition defect of a seven-term symbol over a boundary \
                      grid",
        toml: include_str!("../configs/symbol_duality_grid.toml"),
    },
    Entry {
        name: "cb_feller_cm",
        description: "alternating-difference positivity of sampled transform values \
                      in the start point",
        toml: include_str!("../configs/cb_feller_cm.toml"),
    },
    Entry {
        name: "flow_semigroup",
        description: "two-leg composition defect of the branching flow",
        toml: include_str!("../configs/flow_semigroup.toml"),
    },
    Entry {
        name: "generator_fd_cb",
        description: "finite-difference semigroup derivative against the symbol \
                      action",
        toml: include_str!("../configs/generator_fd_cb.toml"),
    },
    Entry {
        name: "convention_corners",
        description: "boundary rows of the killed pair under the default corner \
                      scoring",
        toml: include_str!("../configs/convention_corners.toml"),
    },
    Entry {
        name: "null_calibration",
        description: "same process on both sides: z statistics of a true-null \
                      comparison",
        toml: include_str!("../configs/null_calibration.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Entry> {
    CATALOG.iter().find(|e| e.name == name)
}
