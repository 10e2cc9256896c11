#include "iat/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace iat {

Tensor& ParamSet::create(const std::string& name, Tensor init) {
    check_contract(!has(name), "param already exists: " + name);
    order_.push_back(name);
    return tensors_.emplace(name, std::move(init)).first->second;
}

Tensor& ParamSet::get(const std::string& name) {
    auto it = tensors_.find(name);
    check_contract(it != tensors_.end(), "unknown param: " + name);
    return it->second;
}

const Tensor& ParamSet::get(const std::string& name) const {
    auto it = tensors_.find(name);
    check_contract(it != tensors_.end(), "unknown param: " + name);
    return it->second;
}

BoundParams::BoundParams(Graph& g, const ParamSet& ps, bool requires_grad) {
    for (const auto& name : ps.names()) vars_.emplace(name, g.leaf(ps.get(name), requires_grad));
}

Var BoundParams::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    check_contract(it != vars_.end(), "param not bound: " + name);
    return it->second;
}

void accumulate_grads(const Graph& g, const BoundParams& bp, const ParamSet& ps,
                      const std::string& prefix, GradMap& grads) {
    for (const auto& name : ps.names()) {
        Var v = bp[name];
        if (!g.has_grad(v)) continue;
        std::string key = prefix + "." + name;
        auto it = grads.find(key);
        if (it == grads.end())
            grads.emplace(key, g.grad(v).clone());
        else
            add_scaled(it->second, g.grad(v), 1.0);
    }
}

void Adam::step(std::vector<std::pair<std::string, ParamSet*>> groups, const GradMap& grads,
                double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [prefix, ps] : groups) {
        for (const auto& name : ps->names()) {
            std::string key = prefix + "." + name;
            Tensor& p = ps->get(name);
            auto& mom = state_[key];
            if (!mom.m.defined()) {
                mom.m = Tensor::zeros(p.shape());
                mom.v = Tensor::zeros(p.shape());
            }
            auto git = grads.find(key);
            const double* pg = git != grads.end() ? git->second.data() : nullptr;
            double* pm = mom.m.data();
            double* pv = mom.v.data();
            double* pp = p.data();
            for (int64_t i = 0; i < p.numel(); ++i) {
                double gi = pg ? pg[i] : 0.0;
                pm[i] = cfg_.beta1 * pm[i] + (1.0 - cfg_.beta1) * gi;
                pv[i] = cfg_.beta2 * pv[i] + (1.0 - cfg_.beta2) * gi * gi;
                double mhat = pm[i] / bc1;
                double vhat = pv[i] / bc2;
                pp[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }
}

void Adam::export_state(std::map<std::string, Tensor>& out) const {
    for (const auto& [key, mom] : state_) {
        out["adam.m." + key] = mom.m;
        out["adam.v." + key] = mom.v;
    }
}

void Adam::import_state(const std::map<std::string, Tensor>& in, int64_t t) {
    state_.clear();
    t_ = t;
    for (const auto& [key, tensor] : in) {
        if (key.rfind("adam.m.", 0) == 0) state_[key.substr(7)].m = tensor.clone();
        if (key.rfind("adam.v.", 0) == 0) state_[key.substr(7)].v = tensor.clone();
    }
}

// ---------------- archive ----------------

namespace {

constexpr char kMagic[8] = {'I', 'A', 'T', 'A', 'R', 'C', 'H', '1'};

void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw ParseError("archive: truncated while reading integer");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
    uint64_t n = read_u64(is);
    if (n > (1ULL << 32)) throw ParseError("archive: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw ParseError("archive: truncated while reading string");
    return s;
}

}  // namespace

void Archive::save(const std::string& path) const {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("archive: cannot open for write: " + tmp.string());
        os.write(kMagic, 8);
        write_u64(os, strings.size());
        for (const auto& [k, v] : strings) {
            write_str(os, k);
            write_str(os, v);
        }
        write_u64(os, arrays.size());
        for (const auto& [k, t] : arrays) {
            write_str(os, k);
            write_u64(os, static_cast<uint64_t>(t.ndim()));
            for (int i = 0; i < t.ndim(); ++i) write_u64(os, static_cast<uint64_t>(t.dim(i)));
            os.write(reinterpret_cast<const char*>(t.data()),
                     static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
        }
        if (!os) throw IoError("archive: write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

Archive Archive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("archive: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("archive: bad magic in " + path);
    Archive a;
    uint64_t ns = read_u64(is);
    for (uint64_t i = 0; i < ns; ++i) {
        std::string k = read_str(is);
        a.strings[k] = read_str(is);
    }
    uint64_t na = read_u64(is);
    for (uint64_t i = 0; i < na; ++i) {
        std::string k = read_str(is);
        uint64_t nd = read_u64(is);
        if (nd > 8) throw ParseError("archive: implausible rank for " + k);
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint64_t d = 0; d < nd; ++d) {
            uint64_t dim = read_u64(is);
            if (dim > (1ULL << 31)) throw ParseError("archive: implausible dim for " + k);
            shape.push_back(static_cast<int>(dim));
            numel *= static_cast<int64_t>(dim);
        }
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(numel)));
        if (!is) throw ParseError("archive: truncated array data for " + k);
        a.arrays[k] = std::move(t);
    }
    return a;
}

}  // namespace iat
