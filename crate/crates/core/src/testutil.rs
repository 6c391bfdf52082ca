use crate::agents::AgentSizes;
use crate::channel::{ChannelParams, PhaseSet, Position, PowerScaling, Scenario, ScenarioGeometry, UeRegion};

pub fn geometry(side: usize) -> ScenarioGeometry {
    ScenarioGeometry {
        bs_position: Position::new(40.0, -40.0, 10.0),
        ris_origin: Position::ORIGIN,
        ris_rows: side,
        ris_cols: side,
        element_spacing: 299_792_458.0 / 3.5e9 / 2.0,
        ue_region: UeRegion { x_center: 20.0, x_half: 15.0, y_center: 20.0, y_half: 20.0, z: -20.0 },
    }
}

pub fn params(noise: bool) -> ChannelParams {
    ChannelParams {
        carrier_frequency_hz: 3.5e9,
        ricean_kappa_db: 10.0,
        direct_extra_attenuation_db: 10.0,
        noise_power_dbm: -60.0,
        noise_enabled: noise,
        max_power_dbm: 30.0,
        power_scaling: PowerScaling::Sqrt,
    }
}

pub fn scenario(side: usize, noise: bool) -> Scenario {
    Scenario::new(geometry(side), params(noise), PhaseSet::binary()).unwrap()
}

pub fn tiny_sizes() -> AgentSizes {
    AgentSizes {
        policy_lstm: vec![6, 5],
        policy_ris_hidden: 5,
        policy_bit_hidden: 3,
        power_lstm: vec![4, 4],
        power_hidden: 5,
        estimator_lstm: vec![5, 4],
        estimator_hidden: vec![6, 6],
        supervised_hidden: vec![8, 8],
    }
}

/// Desk geometry with everything shrunk so a full pipeline runs in well
/// under a second.
pub fn tiny_config() -> crate::config::ExperimentConfig {
    let mut c = crate::config::ExperimentConfig::desk();
    c.scenario.n_ris = 4;
    c.rollout.horizon = 3;
    c.networks = tiny_sizes();
    c.ne.population = 8;
    c.ne.generations = 3;
    c.ne.episodes_per_eval = 4;
    c.training.stage1_episodes = 300;
    c.training.stage3_episodes = 300;
    c.training.supervised_episodes = 300;
    c.training.batch_size = 64;
    c.training.epochs = 4;
    c.training.eval_episodes = 100;
    c.sweep.n_ris = vec![4];
    c
}
