//! Boundary conditions per labelled side of the unit square.

use serde::{Deserialize, Serialize};

use crate::mesh::BoundaryLabel;

/// Condition on the momentum equation along one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DisplacementBc {
    /// Prescribed traction `t_D` (Pa); `[0, 0]` is a free surface.
    Traction([f64; 2]),
    /// Componentwise prescribed displacement (m); `None` leaves the component free.
    Fixed { x: Option<f64>, y: Option<f64> },
}

impl DisplacementBc {
    pub const ROLLER_X: DisplacementBc = DisplacementBc::Fixed { x: Some(0.0), y: None };
    pub const ROLLER_Y: DisplacementBc = DisplacementBc::Fixed { x: None, y: Some(0.0) };
    pub const CLAMPED: DisplacementBc = DisplacementBc::Fixed { x: Some(0.0), y: Some(0.0) };

    pub fn traction(&self) -> Option<[f64; 2]> {
        match *self {
            DisplacementBc::Traction(t) if t != [0.0, 0.0] => Some(t),
            _ => None,
        }
    }

    pub fn fixed(&self) -> [Option<f64>; 2] {
        match *self {
            DisplacementBc::Fixed { x, y } => [x, y],
            DisplacementBc::Traction(_) => [None, None],
        }
    }
}

/// Condition on the mass balance along one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PressureBc {
    /// `p = p_D` (Pa).
    Dirichlet(f64),
    /// Prescribed boundary flux `q_D` (m/s); it enters the right-hand side as `+∫ q_D ψ`.
    Flux(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    /// Indexed in [`BoundaryLabel::ALL`] order.
    displacement: [DisplacementBc; 4],
    pressure: [PressureBc; 4],
    /// Volumetric fluid source `g` (1/s).
    pub source: f64,
}

fn slot(label: BoundaryLabel) -> usize {
    match label {
        BoundaryLabel::Left => 0,
        BoundaryLabel::Top => 1,
        BoundaryLabel::Right => 2,
        BoundaryLabel::Bottom => 3,
    }
}

impl BoundaryConditions {
    pub fn new(displacement: [DisplacementBc; 4], pressure: [PressureBc; 4], source: f64) -> Self {
        BoundaryConditions { displacement, pressure, source }
    }

    /// Rollers on the sides and bottom, a uniform load on top drained to
    /// `p = 0`, no flux elsewhere.
    pub fn consolidation(top_traction: [f64; 2]) -> Self {
        BoundaryConditions {
            displacement: [
                DisplacementBc::ROLLER_X,
                DisplacementBc::Traction(top_traction),
                DisplacementBc::ROLLER_X,
                DisplacementBc::ROLLER_Y,
            ],
            pressure: [
                PressureBc::Flux(0.0),
                PressureBc::Dirichlet(0.0),
                PressureBc::Flux(0.0),
                PressureBc::Flux(0.0),
            ],
            source: 0.0,
        }
    }

    pub fn displacement(&self, label: BoundaryLabel) -> &DisplacementBc {
        &self.displacement[slot(label)]
    }

    pub fn pressure(&self, label: BoundaryLabel) -> &PressureBc {
        &self.pressure[slot(label)]
    }

    pub fn set_displacement(&mut self, label: BoundaryLabel, bc: DisplacementBc) {
        self.displacement[slot(label)] = bc;
    }

    pub fn set_pressure(&mut self, label: BoundaryLabel, bc: PressureBc) {
        self.pressure[slot(label)] = bc;
    }

    /// Multiplies every traction by `factor`.
    pub fn scale_traction(&mut self, factor: f64) {
        for bc in self.displacement.iter_mut() {
            if let DisplacementBc::Traction(t) = bc {
                *t = [t[0] * factor, t[1] * factor];
            }
        }
    }
}
