//! Cart-pole equations of motion with optional external forces.

/// Physical constants of one cart-pole.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            dt: 0.02,
        }
    }
}

/// `[x, ẋ, φ, φ̇]` with `φ` measured from upright.
pub type CartpoleVars = [f64; 4];

impl CartpoleParams {
    /// Accelerations `(ẍ, φ̈)` under a horizontal cart force and a horizontal
    /// force applied at the pole tip.
    ///
    /// The tip force enters the cart equation directly and the pole equation
    /// through its generalized torque `2l·cosφ·F_tip`.
    pub fn accelerations(&self, s: &CartpoleVars, cart_force: f64, tip_force: f64) -> (f64, f64) {
        let [_, _, phi, phi_dot] = *s;
        let total = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.half_length;
        let (sin, cos) = phi.sin_cos();
        let temp = (cart_force + tip_force + pml * phi_dot * phi_dot * sin) / total;
        let phi_acc = (self.gravity * sin - cos * temp + 2.0 * cos * tip_force / self.pole_mass)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total));
        let x_acc = temp - pml * phi_acc * cos / total;
        (x_acc, phi_acc)
    }

    /// Semi-implicit Euler: velocities first, positions from the new
    /// velocities.
    pub fn integrate(&self, s: &CartpoleVars, cart_force: f64, tip_force: f64) -> CartpoleVars {
        let (x_acc, phi_acc) = self.accelerations(s, cart_force, tip_force);
        let x_dot = s[1] + self.dt * x_acc;
        let phi_dot = s[3] + self.dt * phi_acc;
        [s[0] + self.dt * x_dot, x_dot, s[2] + self.dt * phi_dot, phi_dot]
    }

    /// Total mechanical energy with the pivot height as reference.
    pub fn energy(&self, s: &CartpoleVars) -> f64 {
        let [_, x_dot, phi, phi_dot] = *s;
        let (m, mc, l) = (self.pole_mass, self.cart_mass, self.half_length);
        0.5 * (mc + m) * x_dot * x_dot
            + m * l * x_dot * phi_dot * phi.cos()
            + 0.5 * (4.0 / 3.0) * m * l * l * phi_dot * phi_dot
            + m * self.gravity * l * phi.cos()
    }
}
