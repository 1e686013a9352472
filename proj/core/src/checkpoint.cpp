#include "maskdepth/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace maskdepth {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'K', 'D', 'E', 'P', 'T', 'H'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <class T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void mat(const Matrix<float>& m) {
    pod(static_cast<std::uint64_t>(m.rows()));
    pod(static_cast<std::uint64_t>(m.cols()));
    out_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <class T>
  T pod() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 30)) fail();
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  Matrix<float> mat() {
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (rows > (1ULL << 28) || cols > (1ULL << 28) || rows * cols > (1ULL << 30)) fail();
    Matrix<float> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    read(reinterpret_cast<char*>(m.data()), m.size() * sizeof(float));
    return m;
  }
  [[noreturn]] void fail() const { throw DataError("truncated or corrupt checkpoint: " + path_); }

 private:
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail();
  }
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

Checkpoint make_checkpoint(const Model<float>& model, const Adam& adam, std::uint64_t step, std::string config_json) {
  Checkpoint ckpt;
  ckpt.config_json = std::move(config_json);
  ckpt.step = step;
  for (const auto* p : model.parameters()) ckpt.params.push_back({p->name, p->value});
  ckpt.adam_steps = adam.steps();
  ckpt.adam_m = adam.m;
  ckpt.adam_v = adam.v;
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    Writer w(out);
    out.write(kMagic, sizeof(kMagic));
    w.pod(kCheckpointVersion);
    w.str(ckpt.config_json);
    w.pod(ckpt.step);
    w.pod(static_cast<std::uint64_t>(ckpt.params.size()));
    for (const auto& p : ckpt.params) {
      w.str(p.name);
      w.mat(p.value);
    }
    w.pod(ckpt.adam_steps);
    w.pod(static_cast<std::uint64_t>(ckpt.adam_m.size()));
    for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
      w.mat(ckpt.adam_m[i]);
      w.mat(ckpt.adam_v[i]);
    }
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a maskdepth checkpoint: " + path.string());
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + "): " + path.string());
  }
  Checkpoint ckpt;
  ckpt.config_json = r.str();
  ckpt.step = r.pod<std::uint64_t>();
  const auto count = r.pod<std::uint64_t>();
  if (count > (1ULL << 20)) r.fail();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    t.value = r.mat();
    ckpt.params.push_back(std::move(t));
  }
  ckpt.adam_steps = r.pod<std::uint64_t>();
  const auto moments = r.pod<std::uint64_t>();
  if (moments > (1ULL << 20)) r.fail();
  for (std::uint64_t i = 0; i < moments; ++i) {
    ckpt.adam_m.push_back(r.mat());
    ckpt.adam_v.push_back(r.mat());
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, Model<float>& model) {
  auto params = model.parameters();
  if (params.size() != ckpt.params.size()) {
    throw DataError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, model has " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& t = ckpt.params[i];
    if (t.name != params[i]->name || t.value.rows() != params[i]->value.rows() ||
        t.value.cols() != params[i]->value.cols()) {
      throw DataError("checkpoint tensor " + t.name + " " + shape_of(t.value) + " does not match model tensor " +
                      params[i]->name + " " + shape_of(params[i]->value));
    }
    params[i]->value = t.value;
  }
}

void apply_checkpoint(const Checkpoint& ckpt, Model<float>& model, Adam& adam) {
  apply_checkpoint(ckpt, model);
  if (!ckpt.adam_m.empty() && ckpt.adam_m.size() != ckpt.params.size()) {
    throw DataError("checkpoint optimizer state does not match its parameters");
  }
  adam.restore(ckpt.adam_steps, ckpt.adam_m, ckpt.adam_v);
}

}  // namespace maskdepth
