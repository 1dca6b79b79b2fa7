#include "trvae/gradcheck.hpp"

#include "trvae/error.hpp"
#include "trvae/rng.hpp"
#include "trvae/train.hpp"

#include <string>

namespace trvae {

GradCheckProblem make_gradcheck_problem(std::string_view size, std::uint64_t seed) {
    GradCheckProblem pb;
    std::size_t batch = 0;
    if (size == "toy") {
        pb.config.input_dim = 20;
        pb.config.z_dim = 4;
        pb.config.g1_dim = 8;
        pb.config.encoder_hidden = {16};
        pb.config.g2_hidden = {16};
        batch = 8;
    } else if (size == "small") {
        pb.config.input_dim = 6;
        pb.config.z_dim = 2;
        pb.config.g1_dim = 3;
        pb.config.encoder_hidden = {5};
        pb.config.g2_hidden = {5};
        batch = 4;
    } else {
        throw ConfigError("gradcheck: size must be 'toy' or 'small', got '" + std::string(size) + "'");
    }
    pb.config.condition_count = 2;
    pb.config.alpha = 1.0;
    pb.config.eta = 1.0;
    pb.config.beta = 1.0;
    pb.config.mmd_layer = MmdLayer::y1;

    SplitMix64 rng(seed);
    pb.params = ModelParams::initialize(pb.config, rng);
    // Nonzero biases so their gradients are exercised away from the all-zero point.
    const auto names = pb.params.tensor_names();
    const auto tensors = pb.params.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (names[i].ends_with(".bias")) {
            for (double& v : tensors[i]->values()) {
                v = rng.uniform(-0.1, 0.1);
            }
        }
    }
    pb.x = Tensor::zeros(batch, pb.config.input_dim);
    for (double& v : pb.x.values()) {
        v = rng.normal();
    }
    for (std::size_t r = 0; r < batch; ++r) {
        pb.labels.push_back(r < batch / 2 ? 0 : 1);
    }
    pb.eps = Tensor::zeros(batch, pb.config.z_dim);
    for (double& v : pb.eps.values()) {
        v = rng.normal();
    }
    return pb;
}

GradCheckReport run_gradcheck(const GradCheckProblem& pb, double h) {
    const GraphBuilder build = [&pb](Graph& g, std::span<const Var> handles) {
        const BoundParams bound = bind_params(handles, pb.config);
        return loss_trvae(g, bound, pb.config, pb.x, pb.labels, pb.eps).total;
    };
    return grad_check_report(build, copy_tensors(pb.params), h);
}

}  // namespace trvae
