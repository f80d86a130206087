#include "hlab/harness/sft.hpp"

#include "hlab/agapo/trainer.hpp"
#include "hlab/numcore/ops.hpp"
#include "hlab/numcore/optim.hpp"

namespace hlab::harness {

using model::Tokenizer;

SftExample make_sft_example(const agapo::Task& task, const Demonstration& demo, inference::Mode mode,
                            const Tokenizer& tok) {
    std::vector<int> seq = agapo::encode_prompt(tok, task);
    std::size_t first = seq.size();
    auto append = [&](const std::vector<int>& ids) { seq.insert(seq.end(), ids.begin(), ids.end()); };
    if (mode == inference::Mode::reasoning) {
        seq.push_back(Tokenizer::kThinkOpen);
        first = seq.size();
        append(tok.encode(demo.think));
        seq.push_back(Tokenizer::kThinkClose);
        append(tok.encode("\n\n" + demo.answer));
    } else {
        append(tok.encode(demo.answer));
    }
    seq.push_back(Tokenizer::kEos);

    SftExample ex;
    ex.input.assign(seq.begin(), seq.end() - 1);
    ex.targets.assign(ex.input.size(), model::kIgnoreIndex);
    for (std::size_t i = first; i < seq.size(); ++i) ex.targets[i - 1] = seq[i];
    return ex;
}

void SftConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("sft: lr must be > 0");
    if (batch < 1) throw ConfigError("sft: batch must be >= 1");
}

nlohmann::json to_json(const SftConfig& c) {
    return {{"steps", c.steps}, {"lr", c.lr}, {"batch", c.batch}, {"mode", inference::to_string(c.mode)},
            {"seed", c.seed}};
}

SftConfig sft_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("sft config must be an object");
    SftConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            const auto& v = *it;
            if (k == "steps") c.steps = v.get<std::size_t>();
            else if (k == "lr") c.lr = v.get<double>();
            else if (k == "batch") c.batch = v.get<std::size_t>();
            else if (k == "mode") c.mode = inference::mode_from_string(v.get<std::string>());
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else throw ConfigError("sft: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("sft: ") + e.what());
    }
    c.validate();
    return c;
}

Tensor sft_loss(const model::Model& model, const std::vector<const SftExample*>& batch) {
    if (batch.empty()) throw ContractError("sft_loss: empty batch");
    Tensor total;
    for (const auto* ex : batch) {
        auto l = model::ce_loss(model.forward(ex->input), ex->targets);
        total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

std::size_t train_sft(model::Model& model, const std::vector<SftExample>& data, const SftConfig& cfg,
                      const SftHook& hook) {
    cfg.validate();
    if (data.empty()) throw ConfigError("sft: no training examples");
    for (const auto& ex : data)
        if (ex.input.size() > model.config().max_seq)
            throw ConfigError("sft: example of length " + std::to_string(ex.input.size()) +
                              " exceeds the model context " + std::to_string(model.config().max_seq));
    Adam opt(model.parameters(), cfg.lr);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        RngStream rng(cfg.seed, step);
        std::vector<const SftExample*> batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(&data[rng.below(data.size())]);
        auto loss = sft_loss(model, batch);
        opt.zero_grad();
        backward(loss);
        opt.step();
        if (hook && !hook(step, loss.item())) return step + 1;
    }
    return cfg.steps;
}

}  // namespace hlab::harness
