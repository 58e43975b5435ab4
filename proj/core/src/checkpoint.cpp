#include "transmat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace transmat {

namespace {

constexpr const char* kMagic = "transmat-checkpoint 1";

std::string hex64(uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

void put_floats(std::ostream& out, const Tensor<float>& t) {
    std::string bytes(static_cast<size_t>(t.size()) * 4, '\0');
    for (int64_t i = 0; i < t.size(); ++i) {
        const auto u = std::bit_cast<uint32_t>(t[i]);
        for (int b = 0; b < 4; ++b) bytes[static_cast<size_t>(i * 4 + b)] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct Slot {
    std::string name;
    bool buffer;
    const Tensor<float>* tensor;
};

std::vector<Slot> slots(const Network<float>& net) {
    std::vector<Slot> out;
    for (const auto& p : net.parameters().params()) out.push_back({p.name, false, &p.var.value()});
    for (const auto& b : net.parameters().buffers()) out.push_back({b.name, true, b.tensor.get()});
    return out;
}

Shape parse_shape(const std::string& s) {
    Shape shape;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) shape.push_back(std::stoll(item));
    return shape;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, int64_t iteration) {
    std::ostringstream header;
    header << kMagic << "\n";
    header << "config_hash " << hex64(net.config().hash()) << "\n";
    header << "iteration " << iteration << "\n";
    for (const auto& [k, v] : net.config().to_entries()) header << "config " << k << " = " << v << "\n";
    int64_t offset = 0;
    const auto all = slots(net);
    for (const auto& s : all) {
        std::string shape;
        for (size_t i = 0; i < s.tensor->shape().size(); ++i) {
            shape += (i ? "," : "") + std::to_string(s.tensor->shape()[i]);
        }
        header << "tensor " << s.name << " " << (s.buffer ? "buffer" : "param") << " " << shape << " " << offset << " "
               << s.tensor->size() << "\n";
        offset += s.tensor->size();
    }
    header << "end\n";

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp.string());
        const std::string h = header.str();
        out.write(h.data(), static_cast<std::streamsize>(h.size()));
        for (const auto& s : all) put_floats(out, *s.tensor);
        if (!out) throw DataError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

namespace {

CheckpointHeader parse_header(std::istream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw CheckpointError(path.string() + " is not a transmat checkpoint");
    CheckpointHeader h;
    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            ended = true;
            break;
        }
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "config_hash") {
            std::string hex;
            ls >> hex;
            h.config_hash = std::stoull(hex, nullptr, 16);
        } else if (kind == "iteration") {
            ls >> h.iteration;
        } else if (kind == "config") {
            std::string key, eq, value;
            ls >> key >> eq;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            h.config.emplace_back(key, value);
        } else if (kind == "tensor") {
            CheckpointHeader::Entry e;
            std::string role, shape;
            ls >> e.name >> role >> shape >> e.offset >> e.count;
            if (!ls || (role != "param" && role != "buffer")) throw CheckpointError("malformed tensor line: " + line);
            e.buffer = role == "buffer";
            e.shape = parse_shape(shape);
            h.tensors.push_back(std::move(e));
        } else {
            throw CheckpointError("unexpected checkpoint header line: " + line);
        }
    }
    if (!ended) throw CheckpointError(path.string() + ": truncated checkpoint header");
    return h;
}

}  // namespace

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    return parse_header(in, path);
}

int64_t load_checkpoint(const std::filesystem::path& path, Network<float>& net, bool force) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const CheckpointHeader h = parse_header(in, path);
    if (h.config_hash != net.config().hash() && !force) {
        throw CheckpointError("checkpoint " + path.string() + " was written for config " + hex64(h.config_hash) +
                              ", current config is " + hex64(net.config().hash()) + " (use --force to override)");
    }
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::map<std::string, const CheckpointHeader::Entry*> by_name;
    for (const auto& e : h.tensors) by_name[e.name] = &e;
    auto fill = [&](const std::string& name, bool buffer, Tensor<float>& dst) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + name);
        const auto& e = *it->second;
        if (e.buffer != buffer || e.shape != dst.shape()) {
            throw CheckpointError("checkpoint tensor " + name + " has shape " + shape_str(e.shape) + ", expected " +
                                  shape_str(dst.shape()));
        }
        if (static_cast<size_t>((e.offset + e.count) * 4) > payload.size()) {
            throw CheckpointError("checkpoint payload truncated at tensor " + name);
        }
        for (int64_t i = 0; i < e.count; ++i) {
            uint32_t u = 0;
            for (int b = 0; b < 4; ++b) {
                u |= static_cast<uint32_t>(static_cast<unsigned char>(payload[static_cast<size_t>((e.offset + i) * 4 + b)]))
                     << (8 * b);
            }
            dst[i] = std::bit_cast<float>(u);
        }
        by_name.erase(it);
    };
    for (const auto& p : net.parameters().params()) {
        Var<float> v = p.var;
        fill(p.name, false, v.mutable_value());
    }
    for (const auto& b : net.parameters().buffers()) fill(b.name, true, *b.tensor);
    if (!by_name.empty()) throw CheckpointError("checkpoint has unknown tensor " + by_name.begin()->first);
    return h.iteration;
}

}  // namespace transmat
