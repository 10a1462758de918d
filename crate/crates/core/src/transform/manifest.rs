use super::ModelConfig;
use crate::params::join;
use crate::ssm::SsmParams;

/// How a parameter is initialized by [`super::init_weights`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-bound, bound)`.
    Uniform(f64),
    Const(f32),
    /// Diagonal state matrix rows `-(1, 2, ..., N)`.
    StateMatrix,
    /// Step-size bias: inverse softplus of a log-uniform draw in `[0.01, 0.1]`.
    StepBias,
}

/// One entry of the architecture manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 4],
    pub init: Init,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, prefix: &str, name: &str, shape: [usize; 4], init: Init) {
        self.specs.push(ParamSpec {
            name: join(prefix, name),
            shape,
            init,
        });
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        self.push(prefix, "weight", [cout, cin, k, k], Init::Uniform(bound));
        self.push(prefix, "bias", [cout, 1, 1, 1], Init::Uniform(bound));
    }

    fn deconv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        self.push(prefix, "weight", [cin, cout, k, k], Init::Uniform(bound));
        self.push(prefix, "bias", [cout, 1, 1, 1], Init::Uniform(bound));
    }

    fn linear(&mut self, prefix: &str, cin: usize, cout: usize) {
        self.conv(prefix, cin, cout, 1);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(prefix, "gain", [c, 1, 1, 1], Init::Const(1.0));
        self.push(prefix, "bias", [c, 1, 1, 1], Init::Const(0.0));
    }

    fn ssm(&mut self, prefix: &str, dim: usize, state: usize) {
        let r = SsmParams::dt_rank_for(dim);
        self.push(prefix, "a", [dim, state, 1, 1], Init::StateMatrix);
        let rows = r + 2 * state;
        let bound = 1.0 / (dim as f64).sqrt();
        self.push(prefix, "x_proj.weight", [rows, dim, 1, 1], Init::Uniform(bound));
        self.push(prefix, "x_proj.bias", [rows, 1, 1, 1], Init::Const(0.0));
        let bound = 1.0 / (r as f64).sqrt();
        self.push(prefix, "dt_proj.weight", [dim, r, 1, 1], Init::Uniform(bound));
        self.push(prefix, "dt_proj.bias", [dim, 1, 1, 1], Init::StepBias);
        self.push(prefix, "d_skip", [dim, 1, 1, 1], Init::Const(1.0));
    }

    fn vss(&mut self, prefix: &str, c: usize, state: usize) {
        self.norm(&join(prefix, "norm"), c);
        self.linear(&join(prefix, "in_x"), c, c);
        self.linear(&join(prefix, "in_z"), c, c);
        let bound = 1.0 / 3.0;
        self.push(prefix, "dwconv.weight", [c, 1, 3, 3], Init::Uniform(bound));
        self.push(prefix, "dwconv.bias", [c, 1, 1, 1], Init::Uniform(bound));
        for i in 0..4 {
            self.ssm(&join(prefix, &format!("ss2d.path{i}")), c, state);
        }
        self.norm(&join(prefix, "out_norm"), c);
        self.linear(&join(prefix, "out"), c, c);
    }

    fn bottleneck(&mut self, prefix: &str, c: usize) {
        self.conv(&join(prefix, "conv1"), c, c / 2, 1);
        self.conv(&join(prefix, "conv2"), c / 2, c / 2, 3);
        self.conv(&join(prefix, "conv3"), c / 2, c, 1);
    }

    fn attention(&mut self, prefix: &str, c: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&join(prefix, p), c, c);
        }
    }
}

/// Every parameter the architecture reads, in initialization order.
pub fn manifest(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut b = Builder { specs: Vec::new() };
    let s = cfg.state_dim;
    let widths = cfg.main_widths();

    for i in 0..4 {
        let k = if i == 0 { 5 } else { 3 };
        b.conv(&format!("g_a.{i}.conv"), widths[i], widths[i + 1], k);
        b.vss(&format!("g_a.{i}.vss"), widths[i + 1], s);
    }
    b.bottleneck("g_a.rb", cfg.m);

    b.bottleneck("g_s.rb", cfg.m);
    for j in 0..4 {
        let (cin, cout) = (widths[4 - j], widths[3 - j]);
        let k = if j == 3 { 5 } else { 3 };
        b.vss(&format!("g_s.{j}.vss"), cin, s);
        b.deconv(&format!("g_s.{j}.deconv"), cin, cout, k);
    }
    // Centre untrained reconstructions on mid-grey.
    if let Some(last) = b.specs.last_mut() {
        last.init = Init::Const(0.5);
    }

    let [ha, hs] = cfg.hyper_widths;
    b.conv("h_a.conv0", cfg.m, ha, 3);
    b.vss("h_a.vss", ha, s);
    b.conv("h_a.conv1", ha, cfg.n, 3);
    b.deconv("h_s.deconv0", cfg.n, hs, 3);
    b.vss("h_s.vss", hs, s);
    b.deconv("h_s.deconv1", hs, 2 * cfg.m, 3);

    b.push("hyper_prior", "mean", [cfg.n, 1, 1, 1], Init::Uniform(0.5));
    b.push("hyper_prior", "scale", [cfg.n, 1, 1, 1], Init::Uniform(0.5));

    let cw = cfg.chunk_width();
    for k in 0..cfg.k {
        if k > 0 {
            b.vss(&format!("ctx.channel.{k}.vss"), k * cw, s);
            b.conv(&format!("ctx.channel.{k}.conv"), k * cw, 2 * cw, 3);
        }
        b.vss(&format!("ctx.spatial.{k}.vss"), cw, s);
        b.conv(&format!("ctx.spatial.{k}.conv"), cw, 2 * cw, 3);
        for phase in ["anchor", "nonanchor"] {
            let p = format!("ctx.params.{k}.{phase}");
            b.linear(&join(&p, "agg0"), cfg.agg_input(), cfg.agg_width);
            b.linear(&join(&p, "agg1"), cfg.agg_width, cfg.agg_width);
            b.attention(&join(&p, "attn"), cfg.agg_width);
            b.linear(&join(&p, "proj"), cfg.agg_width, 2 * cw);
        }
    }
    b.specs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let specs = manifest(&ModelConfig::default());
        let mut names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn aggregation_budget_matches_context_widths() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.agg_input(), 128 + 128 + 640);
        let specs = manifest(&cfg);
        let agg = specs.iter().find(|s| s.name == "ctx.params.0.anchor.agg0.weight").unwrap();
        assert_eq!(agg.shape, [256, 896, 1, 1]);
        let ch = specs.iter().find(|s| s.name == "ctx.channel.3.conv.weight").unwrap();
        assert_eq!(ch.shape, [128, 192, 3, 3]);
        assert!(!specs.iter().any(|s| s.name.starts_with("ctx.channel.0.")));
    }
}
