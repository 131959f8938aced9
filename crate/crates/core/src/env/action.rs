use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::Cell;

/// Per-agent action. The declaration order doubles as the tie-break order
/// wherever an argmax has to pick one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stop,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stop];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn displacement(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stop => (0, 0),
        }
    }

    pub fn apply(self, c: Cell) -> Cell {
        let (dx, dy) = self.displacement();
        c.offset(dx, dy)
    }

    pub fn is_move(self) -> bool {
        self != Action::Stop
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "up" | "u" => Ok(Action::Up),
            "down" | "d" => Ok(Action::Down),
            "left" | "l" => Ok(Action::Left),
            "right" | "r" => Ok(Action::Right),
            "stop" | "s" | "wait" => Ok(Action::Stop),
            _ => Err(format!("unknown action {s:?}")),
        }
    }
}

/// Every joint action of `k` agents, in base-5 order with agent 0 as the
/// most significant digit.
pub fn joint_actions(k: usize) -> impl Iterator<Item = Vec<Action>> {
    let total = 5usize.pow(k as u32);
    (0..total).map(move |mut code| {
        let mut out = vec![Action::Stop; k];
        for slot in out.iter_mut().rev() {
            *slot = Action::ALL[code % 5];
            code /= 5;
        }
        out
    })
}
