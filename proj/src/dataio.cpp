#include "mopri/dataio.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace mopri::io {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'P', 'R', 'B', 'I', 'N', '1'};

template <typename Scalar, typename M>
void append_rowmajor(std::string& out, const M& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            Scalar v = m(i, j);
            char buf[sizeof(Scalar)];
            std::memcpy(buf, &v, sizeof(Scalar));
            out.append(buf, sizeof(Scalar));
        }
}

template <typename Scalar, typename M>
void read_rowmajor(const std::string& payload, size_t offset, M& m, const std::string& name) {
    const size_t need = offset + sizeof(Scalar) * static_cast<size_t>(m.size());
    if (need > payload.size())
        throw LoadError("bundle tensor '" + name + "' is truncated");
    const char* p = payload.data() + offset;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            Scalar v;
            std::memcpy(&v, p, sizeof(Scalar));
            p += sizeof(Scalar);
            m(i, j) = v;
        }
}

}  // namespace

bool Bundle::has_f64(const std::string& name) const {
    for (const auto& [n, m] : f64)
        if (n == name) return true;
    return false;
}

bool Bundle::has_i64(const std::string& name) const {
    for (const auto& [n, m] : i64)
        if (n == name) return true;
    return false;
}

const Mat& Bundle::get_f64(const std::string& name) const {
    for (const auto& [n, m] : f64)
        if (n == name) return m;
    throw LoadError("bundle is missing f64 tensor '" + name + "'");
}

const MatI& Bundle::get_i64(const std::string& name) const {
    for (const auto& [n, m] : i64)
        if (n == name) return m;
    throw LoadError("bundle is missing i64 tensor '" + name + "'");
}

void write_bundle(const Bundle& b, const std::string& path) {
    json tensors = json::array();
    std::string payload;
    for (const auto& [name, m] : b.f64) {
        tensors.push_back({{"name", name},
                           {"dtype", "f64"},
                           {"rows", m.rows()},
                           {"cols", m.cols()},
                           {"offset", payload.size()}});
        append_rowmajor<double>(payload, m);
    }
    for (const auto& [name, m] : b.i64) {
        tensors.push_back({{"name", name},
                           {"dtype", "i64"},
                           {"rows", m.rows()},
                           {"cols", m.cols()},
                           {"offset", payload.size()}});
        append_rowmajor<int64_t>(payload, m);
    }
    json header = {{"kind", b.kind}, {"meta", b.meta}, {"tensors", tensors}};
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError("cannot open '" + path + "' for writing");
    f.write(kMagic, 8);
    uint64_t hlen = hs.size();
    char lenbuf[8];
    std::memcpy(lenbuf, &hlen, 8);
    f.write(lenbuf, 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw LoadError("short write to '" + path + "'");
}

Bundle read_bundle(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open '" + path + "'");
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (all.size() < 16 || std::memcmp(all.data(), kMagic, 8) != 0)
        throw LoadError("'" + path + "' is not a bundle (bad magic)");
    uint64_t hlen = 0;
    std::memcpy(&hlen, all.data() + 8, 8);
    if (16 + hlen > all.size()) throw LoadError("'" + path + "' header is truncated");
    json header;
    try {
        header = json::parse(all.substr(16, hlen));
    } catch (const json::exception& e) {
        throw LoadError("'" + path + "' has a corrupt header: " + e.what());
    }
    Bundle b;
    b.kind = header.value("kind", "");
    b.meta = header.value("meta", json::object());
    const std::string payload = all.substr(16 + hlen);
    for (const auto& t : header.value("tensors", json::array())) {
        const std::string name = t.at("name");
        const std::string dtype = t.at("dtype");
        const Eigen::Index rows = t.at("rows");
        const Eigen::Index cols = t.at("cols");
        const size_t offset = t.at("offset");
        if (dtype == "f64") {
            Mat m(rows, cols);
            read_rowmajor<double>(payload, offset, m, name);
            b.f64.emplace_back(name, std::move(m));
        } else if (dtype == "i64") {
            MatI m(rows, cols);
            read_rowmajor<int64_t>(payload, offset, m, name);
            b.i64.emplace_back(name, std::move(m));
        } else {
            throw LoadError("bundle tensor '" + name + "' has unknown dtype '" + dtype + "'");
        }
    }
    return b;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError("cannot open '" + path + "' for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw LoadError("'" + path + "': " + e.what());
    }
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

}  // namespace mopri::io
