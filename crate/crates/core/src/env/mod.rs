//! Grid MAPF environment: map, world state, transition and observation.

mod action;
mod grid;
mod observe;
mod scenario;
mod step;
mod world;

pub use action::{joint_actions, Action};
pub use grid::{generate_map, load_map, Cell, DistanceField, GridMap};
pub use observe::{observe, KeyScheme, Observation, ObservationKey, DISTANCE_CAP, FOV};
pub use scenario::{default_step_limit, generate_scenario, AgentSpec, Scenario};
pub use step::{resolve_moves, reward, step, Event, StepOutcome};
pub use world::{place_agents, WorldState};
