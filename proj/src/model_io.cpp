#include "mt/model_io.hpp"

#include <fstream>
#include <sstream>

#include "mt/errors.hpp"

namespace mt {

namespace {

struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;  // in doubles
};

}  // namespace

void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");

    std::vector<std::pair<std::string, Tensor>> tensors = model.params.named;
    tensors.emplace_back("head_weight", model.head.weight);
    tensors.emplace_back("head_bias", model.head.bias);

    const EncoderConfig& e = model.params.config;
    out << "match-tune-model v1\n";
    out << "encoder kind=" << encoder_kind_name(e.kind)
        << " vocab=" << e.vocab_size << " feature=" << e.feature_dim
        << " hidden=" << e.hidden_dim << " rep=" << e.rep_dim
        << " seed=" << e.seed << " init_scale=" << e.init_scale << "\n";
    out << "task loss=" << loss_kind_name(model.loss)
        << " classes=" << model.num_classes
        << " temperature=" << model.temperature << "\n";
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        out << "tensor " << name;
        for (auto d : t.shape()) out << ' ' << d;
        out << " @" << offset << "\n";
        offset += t.size();
    }
    out << "---\n";
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw DataError("write failed for " + path);
}

namespace {

std::string field(const std::string& line, const std::string& key,
                  const std::string& path) {
    const std::string pat = key + "=";
    auto pos = line.find(pat);
    if (pos == std::string::npos)
        throw DataError(path + ": model header missing field " + key);
    pos += pat.size();
    auto end = line.find(' ', pos);
    return line.substr(pos, end == std::string::npos ? end : end - pos);
}

}  // namespace

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file " + path);
    std::string line;
    if (!std::getline(in, line) || line != "match-tune-model v1")
        throw DataError(path + ": not a model file (bad magic line)");

    Model model;
    std::vector<Entry> entries;
    while (std::getline(in, line)) {
        if (line == "---") break;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "encoder") {
            EncoderConfig& e = model.params.config;
            e.kind = encoder_kind_from_name(field(line, "kind", path));
            e.vocab_size = std::stoul(field(line, "vocab", path));
            e.feature_dim = std::stoul(field(line, "feature", path));
            e.hidden_dim = std::stoul(field(line, "hidden", path));
            e.rep_dim = std::stoul(field(line, "rep", path));
            e.seed = std::stoull(field(line, "seed", path));
            e.init_scale = std::stod(field(line, "init_scale", path));
        } else if (tag == "task") {
            model.loss = loss_kind_from_name(field(line, "loss", path));
            model.num_classes = std::stoul(field(line, "classes", path));
            model.temperature = std::stod(field(line, "temperature", path));
        } else if (tag == "tensor") {
            Entry entry;
            ls >> entry.name;
            std::string tok;
            while (ls >> tok) {
                if (tok[0] == '@') {
                    entry.offset = std::stoul(tok.substr(1));
                } else {
                    entry.shape.push_back(std::stoul(tok));
                }
            }
            entries.push_back(std::move(entry));
        } else {
            throw DataError(path + ": unknown header line: " + line);
        }
    }
    if (entries.empty()) throw DataError(path + ": no tensors in header");

    for (const auto& entry : entries) {
        std::size_t n = 1;
        for (auto d : entry.shape) n *= d;
        std::vector<double> data(n);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw DataError(path + ": truncated tensor data for " + entry.name);
        Tensor t = Tensor::from(entry.shape, std::move(data), true);
        if (entry.name == "head_weight")
            model.head.weight = t;
        else if (entry.name == "head_bias")
            model.head.bias = t;
        else
            model.params.named.emplace_back(entry.name, t);
    }
    if (!model.head.weight.defined() || !model.head.bias.defined())
        throw DataError(path + ": model file lacks a classifier head");
    return model;
}

}  // namespace mt
