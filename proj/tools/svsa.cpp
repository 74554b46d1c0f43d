// Command-line front end: train networks, compute Lipschitz moduli, estimate
// post-perturbation solution sets, verify the set inclusion empirically, and
// run the built-in two-parameter scenario end to end.

#include <CLI11.hpp>

#include <svsa/svsa.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

using namespace svsa;
using io::json;

namespace {

struct CommonArgs {
    std::string data_path;
    std::string checkpoint_path;
    std::string spec_path;
    std::string out_path;
    std::string config_path;
    std::uint64_t seed = 0;
    double delta = -1.0;  // < 0: take the value from the spec file
    Index samples = 5;
    Index layer = 1;
    double tol = 1e-6;
};

struct TrainArgs {
    double learning_rate = 1e-2;
    long epochs = 100000;
    Index batch = 0;
    double tolerance = 1e-8;
    Index depth = 2;
    Index width = 8;
    Index input_dim = 0;  // 0: take the dataset dimension
};

struct VerifyArgs {
    Index trials = 20;
    Index set_samples = 6;
    double retrain_lr = 0.05;
    long retrain_epochs = 200000;
};

struct ToyArgs {
    std::string out_dir = ".";
    Index grid = 41;
};

// The config file overrides flag values: any key present in the JSON replaces
// whatever was given on the command line.
void apply_config(const std::string& path, CommonArgs& common, TrainArgs* train, VerifyArgs* verify,
                  ToyArgs* toy) {
    if (path.empty()) return;
    const json cfg = io::parse_json(io::read_text_file(path), path);
    if (!cfg.is_object()) throw IoError("config file must contain a JSON object: " + path);

    auto set_string = [&](const char* key, std::string& slot) {
        if (cfg.contains(key)) slot = cfg[key].get<std::string>();
    };
    set_string("data", common.data_path);
    set_string("checkpoint", common.checkpoint_path);
    set_string("spec", common.spec_path);
    set_string("out", common.out_path);
    if (cfg.contains("seed")) common.seed = cfg["seed"].get<std::uint64_t>();
    if (cfg.contains("delta")) common.delta = cfg["delta"].get<double>();
    if (cfg.contains("samples")) common.samples = cfg["samples"].get<Index>();
    if (cfg.contains("layer")) common.layer = cfg["layer"].get<Index>();
    if (cfg.contains("tol")) common.tol = cfg["tol"].get<double>();
    if (train) {
        if (cfg.contains("lr")) train->learning_rate = cfg["lr"].get<double>();
        if (cfg.contains("epochs")) train->epochs = cfg["epochs"].get<long>();
        if (cfg.contains("batch")) train->batch = cfg["batch"].get<Index>();
        if (cfg.contains("train_tol")) train->tolerance = cfg["train_tol"].get<double>();
        if (cfg.contains("depth")) train->depth = cfg["depth"].get<Index>();
        if (cfg.contains("width")) train->width = cfg["width"].get<Index>();
        if (cfg.contains("input_dim")) train->input_dim = cfg["input_dim"].get<Index>();
    }
    if (verify) {
        if (cfg.contains("trials")) verify->trials = cfg["trials"].get<Index>();
        if (cfg.contains("set_samples")) verify->set_samples = cfg["set_samples"].get<Index>();
        if (cfg.contains("retrain_lr")) verify->retrain_lr = cfg["retrain_lr"].get<double>();
        if (cfg.contains("retrain_epochs")) verify->retrain_epochs = cfg["retrain_epochs"].get<long>();
    }
    if (toy) {
        if (cfg.contains("out_dir")) toy->out_dir = cfg["out_dir"].get<std::string>();
        if (cfg.contains("grid")) toy->grid = cfg["grid"].get<Index>();
    }
}

json common_config_json(const CommonArgs& c) {
    json j;
    j["data"] = c.data_path;
    j["checkpoint"] = c.checkpoint_path;
    j["spec"] = c.spec_path;
    j["out"] = c.out_path;
    j["seed"] = c.seed;
    j["delta"] = c.delta;
    j["samples"] = c.samples;
    j["layer"] = c.layer;
    j["tol"] = c.tol;
    return j;
}

void write_report(const std::string& path, json body) {
    const std::string text = body.dump(2) + "\n";
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        io::write_text_file(path, text);
    }
}

int cmd_train(const CommonArgs& common, const TrainArgs& args) {
    const Dataset data = io::load_dataset(common.data_path);
    Network init;
    if (!common.checkpoint_path.empty()) {
        init = io::load_checkpoint(common.checkpoint_path);
    } else {
        const Index input_dim = args.input_dim > 0 ? args.input_dim : data.dim();
        init = random_network(args.depth, args.width, input_dim, common.seed);
    }
    TrainConfig cfg;
    cfg.learning_rate = args.learning_rate;
    cfg.max_epochs = args.epochs;
    cfg.batch_size = args.batch;
    cfg.tolerance = args.tolerance;
    cfg.seed = common.seed;
    const auto result = sgd_train(init, data, cfg);

    if (common.out_path.empty()) throw InvalidInputError("train: --out checkpoint path is required");
    io::save_checkpoint(common.out_path, result.net);

    json summary;
    summary["config"] = common_config_json(common);
    summary["config"]["lr"] = args.learning_rate;
    summary["config"]["epochs"] = args.epochs;
    summary["config"]["batch"] = args.batch;
    summary["config"]["train_tol"] = args.tolerance;
    summary["reached_tolerance"] = result.reached_tolerance;
    summary["epochs"] = result.epochs;
    summary["final_grad_norm"] = result.final_grad_norm;
    summary["final_loss"] = result.final_loss;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_kappa(const CommonArgs& common) {
    const Dataset data = io::load_dataset(common.data_path);
    const Network net = io::load_checkpoint(common.checkpoint_path);
    const auto cert = kappa_global(net, data, common.layer);
    json body = io::certificate_to_json(cert);
    body["config"] = common_config_json(common);
    write_report(common.out_path, std::move(body));
    return 0;
}

int cmd_estimate(const CommonArgs& common) {
    const Dataset data = io::load_dataset(common.data_path);
    const Network net = io::load_checkpoint(common.checkpoint_path);
    PerturbationSpec spec = io::load_perturbation(common.spec_path);
    if (common.delta >= 0.0) spec.delta = common.delta;
    spec.validate(data.dim(), data.size());

    GraphicalDerivativeOptions opts;
    opts.n_samples = common.samples;
    opts.seed = common.seed;
    opts.tol = common.tol;
    auto report = run_estimation(net, data, spec, opts);
    report.kappa = kappa_global(net, data, common.layer).aggregate;

    json body = io::sensitivity_report_to_json(report);
    body["config"] = common_config_json(common);
    write_report(common.out_path, std::move(body));
    return 0;
}

// Oracle suite plus the empirical inclusion check: finite-difference
// agreement for every derivative operator, the dense pseudo-inverse
// equivalence on small instances, and retraining-based inclusion trials.
int cmd_verify(const CommonArgs& common, const VerifyArgs& args) {
    const Dataset data = io::load_dataset(common.data_path);
    const Network net = io::load_checkpoint(common.checkpoint_path);
    const double delta = common.delta >= 0.0 ? common.delta : 1e-3;

    json body;
    body["config"] = common_config_json(common);
    body["config"]["trials"] = args.trials;
    body["config"]["set_samples"] = args.set_samples;

    // Finite-difference oracle agreement. The gradient check runs at a
    // jittered weight point: at the checkpoint itself the gradient is zero by
    // construction and a relative comparison would be vacuous.
    {
        json fd;
        fd["kink_margin"] = verify::min_preactivation_abs(net, data);
        Rng probe_rng(common.seed ^ 0xBEEFULL);
        const Vector wbar = flatten(net);
        const double probe_offset = 0.01 * (1.0 + wbar.norm());
        const Network probe =
            unflatten(wbar + probe_offset * random_unit_vector(wbar.size(), probe_rng), net);
        fd["probe_offset"] = probe_offset;
        fd["probe_kink_margin"] = verify::min_preactivation_abs(probe, data);
        const Vector g = grad_w_mean_loss(probe, data);
        const Vector g_fd = verify::fd_grad_mean_loss(probe, data, data.all_indices());
        fd["grad_rel_error"] = (g - g_fd).norm() / std::max(g_fd.norm(), 1e-12);

        const Vector x0 = data.features.row(0).transpose();
        double worst_layer = 0.0;
        for (Index h = 1; h <= net.depth(); ++h) {
            const Matrix a = layer_jacobian(net, x0, h);
            const Matrix f = verify::fd_layer_jacobian(net, x0, h);
            worst_layer = std::max(worst_layer, (a - f).norm() / std::max(f.norm(), 1e-12));
        }
        fd["layer_jacobian_rel_error"] = worst_layer;

        const Vector ij = input_jacobian(net, x0);
        const Vector ij_fd = verify::fd_input_jacobian(net, x0);
        fd["input_jacobian_rel_error"] = (ij - ij_fd).norm() / std::max(ij_fd.norm(), 1e-12);

        Rng rng(common.seed ^ 0xFDFDFDULL);
        const HvpOperator op(net, data);
        const Vector v = random_unit_vector(op.dim(), rng);
        const Vector hv = op(v);
        const Vector hv_fd = verify::fd_hvp(net, data, data.all_indices(), v);
        fd["hvp_rel_error"] = (hv - hv_fd).norm() / std::max(hv_fd.norm(), 1e-12);

        const Vector t = random_unit_vector(data.dim(), rng);
        const Vector m = mixed_jvp(net, data, {0}, {t});
        const Vector m_fd = verify::fd_mixed_jvp(net, data, {0}, {t});
        fd["mixed_rel_error"] = (m - m_fd).norm() / std::max(m_fd.norm(), 1e-12);

        fd["passed"] = fd["grad_rel_error"].get<double>() <= 1e-5 &&
                       fd["layer_jacobian_rel_error"].get<double>() <= 1e-5 &&
                       fd["input_jacobian_rel_error"].get<double>() <= 1e-5 &&
                       fd["hvp_rel_error"].get<double>() <= 1e-5 &&
                       fd["mixed_rel_error"].get<double>() <= 1e-4;
        body["fd_oracles"] = std::move(fd);
    }

    // Dense pseudo-inverse equivalence for the estimation solve.
    {
        json pinv;
        const Index p = net.weight_dim();
        pinv["checked"] = p <= 10;
        if (p <= 10) {
            Rng rng(common.seed ^ 0xA5A5ULL);
            PerturbationSpec spec;
            spec.indices = {0};
            spec.directions = {random_unit_vector(data.dim(), rng)};
            spec.delta = delta;

            GraphicalDerivativeOptions opts;
            opts.tol = 1e-12;
            opts.seed = common.seed;
            const auto gd = graphical_derivative(net, data, spec, opts);

            const Matrix h = dense_hessian(HvpOperator(net, data));
            Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
            Vector inv = eig.eigenvalues();
            const double cutoff = 1e-9 * std::max(inv.cwiseAbs().maxCoeff(), 1e-300);
            for (Index i = 0; i < inv.size(); ++i) inv[i] = std::abs(inv[i]) > cutoff ? 1.0 / inv[i] : 0.0;
            const Vector b = stationarity_mixed_term(net, data, spec.indices, spec.tangents());
            const Vector dense = -(eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * b);
            const double rel = (gd.v_samples[0] - dense).norm() / std::max(dense.norm(), 1e-12);
            pinv["rel_error"] = rel;
            pinv["equivalent"] = rel <= 1e-6;
        }
        body["pseudo_inverse"] = std::move(pinv);
    }

    // Empirical Lipschitz-like inclusion.
    {
        InclusionOptions opts;
        opts.delta = delta;
        opts.trials = args.trials;
        opts.seed = common.seed;
        opts.set_samples = args.set_samples;
        opts.retrain.learning_rate = args.retrain_lr;
        opts.retrain.max_epochs = args.retrain_epochs;
        body["inclusion"] = io::inclusion_report_to_json(verify_inclusion(net, data, opts));
    }

    write_report(common.out_path, std::move(body));
    return 0;
}

int cmd_toy(const CommonArgs& common, const ToyArgs& args) {
    ToyOptions opts;
    opts.n_samples = common.samples;
    opts.seed = common.seed ? common.seed : 7;
    const ToyReport report = run_toy(opts);

    std::filesystem::create_directories(args.out_dir);
    const auto path = [&](const std::string& name) {
        return (std::filesystem::path(args.out_dir) / name).string();
    };

    json body = toy_report_to_json(report);
    body["config"] = common_config_json(common);
    body["config"]["out_dir"] = args.out_dir;
    body["config"]["grid"] = args.grid;
    io::write_text_file(path("toy_report.json"), body.dump(2) + "\n");

    // Solution-set curves plus the estimates, for the scenario figures.
    {
        std::ostringstream csv;
        csv << "set,w1,w2\n";
        const auto emit = [&csv](const SolutionSet& set) {
            for (const auto& w : set.samples)
                csv << set.provenance << "," << io::format_double(w[0]) << ","
                    << io::format_double(w[1]) << "\n";
        };
        emit(toy_solution_curve(2.0, 0.4, 3.0, 60, "pristine"));
        emit(toy_solution_curve(2.5, 0.4, 3.0, 60, "poisoned"));
        emit(report.sensitivity.estimated);
        SolutionSet center;
        center.provenance = "center";
        center.samples.push_back(flatten(toy_network()));
        emit(center);
        io::write_text_file(path("toy_solution_sets.csv"), csv.str());
    }

    // Mean-loss landscape of the poisoned scenario over [0, 3]^2.
    {
        const Network grid_center = toy_network(1.5, 1.5);
        GridSpec grid{.alpha_min = -1.5, .alpha_max = 1.5, .alpha_count = args.grid,
                      .beta_min = -1.5, .beta_max = 1.5, .beta_count = args.grid};
        const Matrix losses =
            landscape_slice(grid_center, toy_poisoned(), Vector::Unit(2, 0), Vector::Unit(2, 1), grid);
        Vector alphas = grid.alphas();
        Vector betas = grid.betas();
        for (Index i = 0; i < alphas.size(); ++i) alphas[i] += 1.5;  // report absolute w1
        for (Index i = 0; i < betas.size(); ++i) betas[i] += 1.5;    // report absolute w2
        io::write_text_file(path("toy_landscape.csv"), io::landscape_to_csv(alphas, betas, losses));
    }

    std::cout << body.dump(2) << "\n";
    return 0;
}

int error_code_for(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) return 2;
    if (dynamic_cast<const InvalidInputError*>(&e)) return 2;
    if (dynamic_cast<const PreconditionError*>(&e)) return 3;
    if (dynamic_cast<const DegeneratePointError*>(&e)) return 4;
    if (dynamic_cast<const SingularHessianError*>(&e)) return 4;
    if (dynamic_cast<const DivergenceError*>(&e)) return 4;
    return 1;
}

const char* error_type_for(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) return "io";
    if (dynamic_cast<const InvalidInputError*>(&e)) return "invalid_input";
    if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
    if (dynamic_cast<const DegeneratePointError*>(&e)) return "degenerate_point";
    if (dynamic_cast<const SingularHessianError*>(&e)) return "singular_hessian";
    if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
    return "error";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Set-valued sensitivity analysis for fully-connected ReLU networks"};
    app.require_subcommand(1);

    CommonArgs common;
    TrainArgs train_args;
    VerifyArgs verify_args;
    ToyArgs toy_args;

    const auto add_common = [&common](CLI::App* cmd, bool needs_data, bool needs_checkpoint) {
        auto* data = cmd->add_option("--data", common.data_path, "dataset CSV (x_1..x_d,y header)");
        if (needs_data) data->required();
        auto* ckpt = cmd->add_option("--checkpoint", common.checkpoint_path, "network checkpoint JSON");
        if (needs_checkpoint) ckpt->required();
        cmd->add_option("--out", common.out_path, "output report path ('-' for stdout)");
        cmd->add_option("--config", common.config_path, "JSON config; overrides flags");
        cmd->add_option("--seed", common.seed, "random seed");
        cmd->add_option("--delta", common.delta, "perturbation magnitude override");
        cmd->add_option("--samples", common.samples, "number of sampled solutions");
        cmd->add_option("--layer", common.layer, "layer index (1-based)");
        cmd->add_option("--tol", common.tol, "solver tolerance");
    };

    auto* train = app.add_subcommand("train", "train a network to a stationary point");
    add_common(train, true, false);
    train->add_option("--lr", train_args.learning_rate, "learning rate");
    train->add_option("--epochs", train_args.epochs, "max epochs");
    train->add_option("--batch", train_args.batch, "mini-batch size (0 = full batch)");
    train->add_option("--train-tol", train_args.tolerance, "gradient-norm stopping tolerance");
    train->add_option("--depth", train_args.depth, "layers for a fresh network");
    train->add_option("--width", train_args.width, "width for a fresh network");
    train->add_option("--input-dim", train_args.input_dim, "input dim for a fresh network");

    auto* kappa = app.add_subcommand("kappa", "compute the Lipschitz-like moduli");
    add_common(kappa, true, true);

    auto* estimate = app.add_subcommand("estimate", "estimate the perturbed solution set");
    add_common(estimate, true, true);
    estimate->add_option("--spec", common.spec_path, "perturbation spec JSON")->required();

    auto* verify = app.add_subcommand("verify", "run the oracle suite and the inclusion check");
    add_common(verify, true, true);
    verify->add_option("--trials", verify_args.trials, "inclusion trials");
    verify->add_option("--set-samples", verify_args.set_samples, "original-set samples");
    verify->add_option("--retrain-lr", verify_args.retrain_lr, "retraining learning rate");
    verify->add_option("--retrain-epochs", verify_args.retrain_epochs, "retraining epoch cap");

    auto* toy = app.add_subcommand("toy", "run the built-in two-parameter scenario");
    add_common(toy, false, false);
    toy->add_option("--out-dir", toy_args.out_dir, "directory for the scenario bundle");
    toy->add_option("--grid", toy_args.grid, "landscape grid resolution");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            apply_config(common.config_path, common, &train_args, nullptr, nullptr);
            return cmd_train(common, train_args);
        }
        if (kappa->parsed()) {
            apply_config(common.config_path, common, nullptr, nullptr, nullptr);
            return cmd_kappa(common);
        }
        if (estimate->parsed()) {
            apply_config(common.config_path, common, nullptr, nullptr, nullptr);
            return cmd_estimate(common);
        }
        if (verify->parsed()) {
            apply_config(common.config_path, common, nullptr, &verify_args, nullptr);
            return cmd_verify(common, verify_args);
        }
        if (toy->parsed()) {
            apply_config(common.config_path, common, nullptr, nullptr, &toy_args);
            return cmd_toy(common, toy_args);
        }
    } catch (const std::exception& e) {
        json err;
        err["error"] = {{"type", error_type_for(e)}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return error_code_for(e);
    }
    return 0;
}
