#include "conviction/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace conviction {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json layer_to_json(const ConvLayer& l) {
    json jw = json::array();
    for (const c64& w : l.w) jw.push_back({w.real(), w.imag()});
    return json{{"in", l.in_ch}, {"out", l.out_ch}, {"k", l.k}, {"linear", l.linear}, {"w", jw}};
}

ConvLayer layer_from_json(const json& j) {
    ConvLayer l;
    l.in_ch = j.at("in").get<int>();
    l.out_ch = j.at("out").get<int>();
    l.k = j.at("k").get<int>();
    l.linear = j.at("linear").get<bool>();
    for (const auto& p : j.at("w")) l.w.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    if (l.w.size() != l.weight_count()) throw std::runtime_error("checkpoint: weight count mismatch");
    return l;
}

json stack_to_json_obj(const ConvStack& s) {
    json layers = json::array();
    for (const ConvLayer& l : s.layers) layers.push_back(layer_to_json(l));
    return json{{"delta", s.delta},
                {"mode", s.mode == ConvMode::Complex ? "complex" : "split-real"},
                {"layers", layers}};
}

ConvStack stack_from_json_obj(const json& j) {
    ConvStack s;
    s.delta = j.at("delta").get<double>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "complex")
        s.mode = ConvMode::Complex;
    else if (mode == "split-real")
        s.mode = ConvMode::SplitReal;
    else
        throw std::runtime_error("checkpoint: unknown conv mode " + mode);
    for (const auto& jl : j.at("layers")) s.layers.push_back(layer_from_json(jl));
    s.validate();
    return s;
}

std::string scheme_name(UnrollScheme s) {
    switch (s) {
        case UnrollScheme::TwoStepGrad: return "two-step-grad";
        case UnrollScheme::HybridDomain: return "hybrid-domain";
        case UnrollScheme::CombineShrink: return "combine-shrink";
    }
    return "?";
}

UnrollScheme scheme_from_name(const std::string& s) {
    if (s == "two-step-grad") return UnrollScheme::TwoStepGrad;
    if (s == "hybrid-domain") return UnrollScheme::HybridDomain;
    if (s == "combine-shrink") return UnrollScheme::CombineShrink;
    throw std::runtime_error("checkpoint: unknown scheme " + s);
}

json phase_to_json(const PhaseOps& p) {
    json j;
    if (p.g) j["g"] = stack_to_json_obj(*p.g);
    if (p.J) j["J"] = stack_to_json_obj(*p.J);
    if (p.G) j["G"] = stack_to_json_obj(*p.G);
    if (p.Gt) j["Gt"] = stack_to_json_obj(*p.Gt);
    if (p.Jt) j["Jt"] = stack_to_json_obj(*p.Jt);
    if (p.K) j["K"] = stack_to_json_obj(*p.K);
    j["alpha"] = p.alpha;
    j["tau"] = p.tau;
    j["shrink"] = p.shrink;
    return j;
}

PhaseOps phase_from_json(const json& j) {
    PhaseOps p;
    if (j.contains("g")) p.g = stack_from_json_obj(j["g"]);
    if (j.contains("J")) p.J = stack_from_json_obj(j["J"]);
    if (j.contains("G")) p.G = stack_from_json_obj(j["G"]);
    if (j.contains("Gt")) p.Gt = stack_from_json_obj(j["Gt"]);
    if (j.contains("Jt")) p.Jt = stack_from_json_obj(j["Jt"]);
    if (j.contains("K")) p.K = stack_from_json_obj(j["K"]);
    p.alpha = j.at("alpha").get<double>();
    p.tau = j.at("tau").get<double>();
    p.shrink = j.at("shrink").get<double>();
    return p;
}

json params_to_json(const UnrolledParams& p, double omega) {
    json phases = json::array();
    for (const PhaseOps& ph : p.phases) phases.push_back(phase_to_json(ph));
    json steps = json::array();
    for (const StepSizes& s : p.steps)
        steps.push_back(json{{"alpha", s.alpha}, {"tau", s.tau}, {"shrink", s.shrink}});
    json j{{"format_version", kFormatVersion},
           {"scheme", scheme_name(p.scheme)},
           {"T", p.T},
           {"sharing", to_string(p.sharing)},
           {"eps0", p.eps0},
           {"eps_gamma", p.eps_gamma},
           {"omega", omega},
           {"phases", phases},
           {"steps", steps}};
    if (p.k0) j["k0"] = stack_to_json_obj(*p.k0);
    return j;
}

void params_from_json(const json& j, UnrolledParams& p, double& omega) {
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw std::runtime_error("checkpoint: unsupported format version");
    p.scheme = scheme_from_name(j.at("scheme").get<std::string>());
    p.T = j.at("T").get<int>();
    p.sharing = sharing_from_string(j.at("sharing").get<std::string>());
    p.eps0 = j.at("eps0").get<double>();
    p.eps_gamma = j.at("eps_gamma").get<double>();
    omega = j.at("omega").get<double>();
    p.phases.clear();
    for (const auto& jp : j.at("phases")) p.phases.push_back(phase_from_json(jp));
    p.steps.clear();
    for (const auto& js : j.at("steps"))
        p.steps.push_back(StepSizes{js.at("alpha").get<double>(), js.at("tau").get<double>(),
                                    js.at("shrink").get<double>()});
    if (j.contains("k0")) p.k0 = stack_from_json_obj(j["k0"]);
    p.validate();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path);
}

json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    json j;
    f >> j;
    return j;
}

}  // namespace

std::string conv_stack_to_json(const ConvStack& s) {
    json j = stack_to_json_obj(s);
    j["format_version"] = kFormatVersion;
    return j.dump(2);
}

ConvStack conv_stack_from_json(const std::string& text) {
    return stack_from_json_obj(json::parse(text));
}

void save_checkpoint(const std::string& path, const TrainingCheckpoint& ck) {
    json j = params_to_json(ck.params, ck.omega);
    j["epoch"] = ck.epoch;
    j["adam"] = json{{"t", ck.adam.t}, {"m", ck.adam.m}, {"v", ck.adam.v}};
    write_text(path, j.dump(2));
}

TrainingCheckpoint load_checkpoint(const std::string& path) {
    json j = read_json(path);
    TrainingCheckpoint ck;
    params_from_json(j, ck.params, ck.omega);
    if (j.contains("epoch")) ck.epoch = j.at("epoch").get<long>();
    if (j.contains("adam")) {
        ck.adam.t = j["adam"].at("t").get<long>();
        ck.adam.m = j["adam"].at("m").get<std::vector<double>>();
        ck.adam.v = j["adam"].at("v").get<std::vector<double>>();
    }
    return ck;
}

void save_params(const std::string& path, const UnrolledParams& p, double omega) {
    write_text(path, params_to_json(p, omega).dump(2));
}

TrainingCheckpoint load_params(const std::string& path) { return load_checkpoint(path); }

}  // namespace conviction
