//! Tunable constants. Every field has a default; a JSON config file only
//! needs to mention what it overrides.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub hhp: HhpConfig,
    pub frequency: FrequencyConfig,
    pub geometry: GeometryConfig,
    pub covering: CoveringConfig,
    pub elliptic: EllipticConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HhpConfig {
    pub eps0: f64,
    pub tau: f64,
    pub sphere_samples_per_dim: usize,
}

impl Default for HhpConfig {
    fn default() -> Self {
        HhpConfig { eps0: 1e-4, tau: 1e-2, sphere_samples_per_dim: 10_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyConfig {
    pub eps0: f64,
    pub profile_radii: usize,
    pub window_samples: usize,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig { eps0: 1e-3, profile_radii: 64, window_samples: 200 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Ball samples per dimension for infima over `B_r(x)`.
    pub inf_samples_per_dim: usize,
    /// Grid spacing as a fraction of `r`.
    pub spacing_factor: f64,
    pub refine_tolerance: f64,
    /// Threshold constant for the nodal set.
    pub nodal_eps: f64,
    /// Resolution of sphere quadrature for grid-backed fields.
    pub quadrature_resolution: usize,
    pub radius_rel_tol: f64,
    /// Radius of the ball the set computations live in.
    pub domain_radius: f64,
    /// Upper radius for critical-radius searches.
    pub r0: f64,
    /// Roots closer than this are merged into one critical point.
    pub root_cluster_tol: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            inf_samples_per_dim: 200,
            spacing_factor: 0.25,
            refine_tolerance: 0.05,
            nodal_eps: 1.0 / 16.0,
            quadrature_resolution: 64,
            radius_rel_tol: 1e-4,
            domain_radius: 0.5,
            r0: 0.5,
            root_cluster_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CoveringConfig {
    /// Pinching width used for good scales and for `r'_x`.
    pub eps: f64,
    pub tau: f64,
    /// Starting degree is `ceil(degree_factor * Lambda)`.
    pub degree_factor: f64,
    /// Points per good-scale test; `None` means `20^n`.
    pub good_scale_samples: Option<usize>,
    pub vitali_dilation: f64,
    /// `y` is good when all nearby `r_z >= r_y / good_ratio`.
    pub good_ratio: f64,
    pub neighbourhood_factor: f64,
    pub bad_divisor: f64,
    /// Scale shrink between the covered set and the ball radius; `None` means `tau^d`.
    pub shrink_factor: Option<f64>,
    /// Use the single-ball construction in the plane.
    pub planar_single_ball: bool,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        CoveringConfig {
            eps: 0.1,
            tau: 1e-2,
            degree_factor: 2.0,
            good_scale_samples: None,
            vitali_dilation: 5.0,
            good_ratio: 7.0,
            neighbourhood_factor: 5.0,
            bad_divisor: 55.0,
            shrink_factor: None,
            planar_single_ball: true,
        }
    }
}

impl CoveringConfig {
    pub fn good_scale_samples(&self, n: usize) -> usize {
        self.good_scale_samples.unwrap_or_else(|| 20usize.pow(n as u32))
    }

    pub fn shrink(&self, d: u32) -> f64 {
        self.shrink_factor.unwrap_or_else(|| self.tau.powi(d as i32))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EllipticConfig {
    pub lambda_presets: Vec<f64>,
    pub residual_tol: f64,
    pub boundary_nodes: usize,
    pub radial_nodes: usize,
    pub grid_points: usize,
    /// Allowed almost-monotonicity constant per unit of lambda.
    pub monotonicity_bound: f64,
    /// Slack in the gradient lower bound.
    pub gradient_slack: f64,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        EllipticConfig {
            lambda_presets: vec![0.0, 0.05, 0.1, 0.2],
            residual_tol: 1e-10,
            boundary_nodes: 512,
            radial_nodes: 48,
            grid_points: 129,
            monotonicity_bound: 50.0,
            gradient_slack: 0.25,
        }
    }
}
