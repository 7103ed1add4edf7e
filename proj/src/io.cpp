#include "lcgp/io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace lcgp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

double parse_double(const std::string& s, const fs::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where(path, line) + "cannot parse '" + s + "' as a number");
  }
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  return out;
}

bool is_input_column(const std::string& name) {
  if (name == "x") return true;
  if (name.size() < 2 || name[0] != 'x') return false;
  return std::all_of(name.begin() + 1, name.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

SampleTable read_sample_csv(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split(trim(line), ',');
      break;
    }
  }
  if (header.empty()) throw ParseError(path.string() + ": file is empty");
  Index n_inputs = 0;
  while (n_inputs < Index(header.size()) && is_input_column(header[n_inputs])) ++n_inputs;
  if (n_inputs == 0) throw ParseError(where(path, line_no) + "header must start with an input column 'x' or 'x1'");
  const Index m = Index(header.size()) - n_inputs;
  if (m < 1) throw ParseError(where(path, line_no) + "header names no output channels");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line), ',');
    if (cells.size() != header.size()) {
      throw ParseError(where(path, line_no) + "expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(parse_double(c, path, line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");

  SampleTable t;
  const Index n = Index(rows.size());
  t.x.resize(n, n_inputs);
  t.y.resize(m, n);
  for (Index i = 0; i < n; ++i) {
    for (Index d = 0; d < n_inputs; ++d) t.x(i, d) = rows[i][d];
    for (Index c = 0; c < m; ++c) t.y(c, i) = rows[i][n_inputs + c];
  }
  t.channel_names.assign(header.begin() + n_inputs, header.end());
  return t;
}

void write_sample_csv(const fs::path& path, const MatrixXd& x, const MatrixXd& y,
                      const std::vector<std::string>& channel_names) {
  if (y.cols() != x.rows()) throw std::invalid_argument("write_sample_csv: shape mismatch");
  auto out = open_out(path);
  for (Index d = 0; d < x.cols(); ++d) {
    out << (x.cols() == 1 ? std::string("x") : "x" + std::to_string(d + 1)) << ",";
  }
  for (Index c = 0; c < y.rows(); ++c) {
    const std::string name =
        c < Index(channel_names.size()) ? channel_names[c] : "y" + std::to_string(c + 1);
    out << name << (c + 1 < y.rows() ? "," : "\n");
  }
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index d = 0; d < x.cols(); ++d) out << format_double(x(i, d)) << ",";
    for (Index c = 0; c < y.rows(); ++c) {
      out << format_double(y(c, i)) << (c + 1 < y.rows() ? "," : "\n");
    }
  }
}

Dataset read_dataset(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw std::invalid_argument("no data files given");
  Dataset d;
  for (std::size_t s = 0; s < paths.size(); ++s) {
    SampleTable t = read_sample_csv(paths[s]);
    if (s == 0) {
      d.x = t.x;
      d.channel_names = t.channel_names;
    } else {
      if (t.x.rows() != d.x.rows() || t.x.cols() != d.x.cols()) {
        throw ParseError(paths[s].string() + ": has " + std::to_string(t.x.rows()) +
                         " input points, expected " + std::to_string(d.x.rows()));
      }
      if ((t.x - d.x).cwiseAbs().maxCoeff() > 0.0) {
        throw ParseError(paths[s].string() + ": input grid differs from " + paths[0].string());
      }
      if (t.channel_names != d.channel_names) {
        throw ParseError(paths[s].string() + ": channel names differ from " + paths[0].string());
      }
    }
    d.y.push_back(std::move(t.y));
  }
  d.validate();
  return d;
}

VectorXd read_labels(const fs::path& path, const std::vector<fs::path>& sample_paths) {
  auto in = open_in(path);
  const Index s_count = Index(sample_paths.size());
  VectorXd labels = VectorXd::Zero(s_count);
  std::vector<bool> seen(s_count, false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto cells = split(t, ',');
    if (cells.size() == 1) cells = split_ws(t);
    if (cells.size() != 2) throw ParseError(where(path, line_no) + "expected 'sample,label'");
    if (cells[1] == "label") continue;  // header
    Index idx = -1;
    for (Index s = 0; s < s_count; ++s) {
      if (sample_paths[s].stem().string() == cells[0] || sample_paths[s].string() == cells[0]) idx = s;
    }
    if (idx < 0) {
      const double v = parse_double(cells[0], path, line_no);
      if (v != std::floor(v) || v < 0 || v >= double(s_count)) {
        throw ParseError(where(path, line_no) + "unknown sample '" + cells[0] + "'");
      }
      idx = Index(v);
    }
    const double r = parse_double(cells[1], path, line_no);
    if (r != 1.0 && r != -1.0) throw ParseError(where(path, line_no) + "label must be -1 or +1");
    labels(idx) = r;
    seen[idx] = true;
  }
  for (Index s = 0; s < s_count; ++s) {
    if (!seen[s]) throw ParseError(path.string() + ": no label for sample " + std::to_string(s));
  }
  return labels;
}

void write_labels(const fs::path& path, const VectorXd& labels) {
  auto out = open_out(path);
  out << "sample,label\n";
  for (Index s = 0; s < labels.size(); ++s) out << s << "," << int(labels(s)) << "\n";
}

Dataset read_jura(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  std::size_t first = 0;
  while (first < lines.size() && trim(lines[first]).empty()) ++first;
  if (first == lines.size()) throw ParseError(path.string() + ": file is empty");

  std::vector<std::string> names;
  std::size_t data_start = 0;
  bool csv = false;
  const std::string head = trim(lines[first]);
  if (head.find(',') != std::string::npos) {
    csv = true;
    names = split(head, ',');
    for (auto& nm : names) nm.erase(std::remove(nm.begin(), nm.end(), '"'), nm.end());
    data_start = first + 1;
  } else if (const auto toks = split_ws(head);
             toks.size() > 2 && std::find(toks.begin(), toks.end(), "Xloc") != toks.end()) {
    names = toks;
    data_start = first + 1;
  } else {
    // GSLIB: title, variable count, one name per line, then data.
    if (first + 1 >= lines.size()) throw ParseError(where(path, first + 2) + "missing variable count");
    const double nvar = parse_double(trim(lines[first + 1]), path, first + 2);
    for (std::size_t k = 0; k < std::size_t(nvar); ++k) {
      const std::size_t ln = first + 2 + k;
      if (ln >= lines.size()) throw ParseError(where(path, ln + 1) + "missing variable name");
      names.push_back(split_ws(lines[ln]).empty() ? "" : split_ws(lines[ln]).front());
    }
    data_start = first + 2 + std::size_t(nvar);
  }
  auto column = [&](const std::string& want) {
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::string lower = names[k], target = want;
      std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
      std::transform(target.begin(), target.end(), target.begin(), ::tolower);
      if (lower == target) return k;
    }
    throw ParseError(path.string() + ": no column named " + want);
  };
  const std::size_t cx = column("Xloc"), cy = column("Yloc"), ccd = column("Cd"),
                    cni = column("Ni"), czn = column("Zn");

  std::vector<std::array<double, 5>> rows;
  for (std::size_t ln = data_start; ln < lines.size(); ++ln) {
    const std::string t = trim(lines[ln]);
    if (t.empty()) continue;
    auto cells = csv ? split(t, ',') : split_ws(t);
    if (cells.size() != names.size()) {
      throw ParseError(where(path, ln + 1) + "expected " + std::to_string(names.size()) +
                       " fields, found " + std::to_string(cells.size()));
    }
    rows.push_back({parse_double(cells[cx], path, ln + 1), parse_double(cells[cy], path, ln + 1),
                    parse_double(cells[ccd], path, ln + 1), parse_double(cells[cni], path, ln + 1),
                    parse_double(cells[czn], path, ln + 1)});
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");
  Dataset d;
  const Index n = Index(rows.size());
  d.x.resize(n, 2);
  MatrixXd y(3, n);
  for (Index i = 0; i < n; ++i) {
    d.x(i, 0) = rows[i][0];
    d.x(i, 1) = rows[i][1];
    for (Index c = 0; c < 3; ++c) y(c, i) = rows[i][2 + c];
  }
  d.y.push_back(std::move(y));
  d.channel_names = {"Cd", "Ni", "Zn"};
  d.validate();
  return d;
}

void write_matrix_csv(const fs::path& path, const MatrixXd& m,
                      const std::vector<std::string>& header) {
  auto out = open_out(path);
  if (!header.empty()) {
    for (std::size_t k = 0; k < header.size(); ++k) out << header[k] << (k + 1 < header.size() ? "," : "\n");
  }
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << format_double(m(r, c)) << (c + 1 < m.cols() ? "," : "\n");
  }
}

MatrixXd read_matrix_csv(const fs::path& path, bool has_header) {
  auto in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool skipped = !has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!skipped) {
      skipped = true;
      continue;
    }
    std::vector<double> row;
    for (const auto& c : split(trim(line), ',')) row.push_back(parse_double(c, path, line_no));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(where(path, line_no) + "expected " + std::to_string(rows.front().size()) +
                       " fields, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");
  MatrixXd m(rows.size(), rows.front().size());
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

// ---- model archive ----

namespace {

constexpr char kMagic[8] = {'L', 'C', 'G', 'P', 'M', 'O', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;
enum : std::uint8_t { kMatrix = 0, kText = 1 };

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ParseError(path.string() + ": truncated model archive");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

struct Record {
  std::uint8_t type = kMatrix;
  MatrixXd matrix;
  std::string text;
};

class ArchiveWriter {
 public:
  void matrix(const std::string& name, const MatrixXd& m) { records_.push_back({name, {kMatrix, m, {}}}); }
  void scalar(const std::string& name, double v) { matrix(name, MatrixXd::Constant(1, 1, v)); }
  void text(const std::string& name, const std::string& t) { records_.push_back({name, {kText, {}, t}}); }

  void write(const fs::path& path) const {
    auto out = open_out(path, std::ios::binary);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, std::uint32_t(records_.size()));
    for (const auto& [name, rec] : records_) {
      put<std::uint32_t>(out, std::uint32_t(name.size()));
      out.write(name.data(), std::streamsize(name.size()));
      put<std::uint8_t>(out, rec.type);
      if (rec.type == kMatrix) {
        put<std::uint64_t>(out, std::uint64_t(rec.matrix.rows()));
        put<std::uint64_t>(out, std::uint64_t(rec.matrix.cols()));
        for (Index k = 0; k < rec.matrix.size(); ++k) put<double>(out, rec.matrix.data()[k]);
      } else {
        put<std::uint64_t>(out, std::uint64_t(rec.text.size()));
        out.write(rec.text.data(), std::streamsize(rec.text.size()));
      }
    }
    if (!out) throw std::runtime_error(path.string() + ": write failed");
  }

 private:
  std::vector<std::pair<std::string, Record>> records_;
};

class ArchiveReader {
 public:
  explicit ArchiveReader(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
      throw ParseError(path.string() + ": not a model archive");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) {
      throw ParseError(path.string() + ": unsupported archive version " + std::to_string(version));
    }
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t r = 0; r < count; ++r) {
      const auto len = get<std::uint32_t>(in, path);
      std::string name(len, '\0');
      if (!in.read(name.data(), len)) throw ParseError(path.string() + ": truncated model archive");
      Record rec;
      rec.type = get<std::uint8_t>(in, path);
      if (rec.type == kMatrix) {
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (rows * cols > (std::uint64_t(1) << 32)) throw ParseError(path.string() + ": record too large");
        rec.matrix.resize(Index(rows), Index(cols));
        for (Index k = 0; k < rec.matrix.size(); ++k) rec.matrix.data()[k] = get<double>(in, path);
      } else if (rec.type == kText) {
        const auto n = get<std::uint64_t>(in, path);
        if (n > (std::uint64_t(1) << 32)) throw ParseError(path.string() + ": record too large");
        rec.text.resize(std::size_t(n));
        if (!in.read(rec.text.data(), std::streamsize(n))) {
          throw ParseError(path.string() + ": truncated model archive");
        }
      } else {
        throw ParseError(path.string() + ": unknown record type in '" + name + "'");
      }
      records_[name] = std::move(rec);
    }
  }

  bool has(const std::string& name) const { return records_.count(name) > 0; }
  const MatrixXd& matrix(const std::string& name) const { return find(name, kMatrix).matrix; }
  double scalar(const std::string& name) const {
    const MatrixXd& m = matrix(name);
    if (m.size() != 1) throw ParseError(path_.string() + ": record '" + name + "' is not a scalar");
    return m(0, 0);
  }
  const std::string& text(const std::string& name) const { return find(name, kText).text; }

 private:
  const Record& find(const std::string& name, std::uint8_t type) const {
    const auto it = records_.find(name);
    if (it == records_.end()) throw ParseError(path_.string() + ": missing record '" + name + "'");
    if (it->second.type != type) throw ParseError(path_.string() + ": record '" + name + "' has the wrong type");
    return it->second;
  }

  fs::path path_;
  std::map<std::string, Record> records_;
};

VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), Index(v.size()));
}

std::vector<double> from_vector(const MatrixXd& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

std::string fit_config_text(const FitConfig& c) {
  std::ostringstream os;
  os << "max_iters=" << c.max_iters << "\n"
     << "tol=" << format_double(c.tol) << "\n"
     << "classification=" << c.classification << "\n"
     << "inner_iters=" << c.inner_iters << "\n"
     << "seed=" << c.seed << "\n"
     << "q=" << c.q << "\n"
     << "nu=" << c.nu << "\n"
     << "standardize=" << c.standardize << "\n"
     << "map_inputs=" << c.map_inputs << "\n"
     << "optimize_omega_u=" << c.optimize_omega_u << "\n"
     << "optimize_lengthscales=" << c.optimize_lengthscales << "\n"
     << "check_each_update=" << c.check_each_update << "\n";
  return os.str();
}

FitConfig parse_fit_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto num = [&](const char* k) { return std::stod(kv.at(k)); };
  FitConfig c;
  c.max_iters = int(num("max_iters"));
  c.tol = num("tol");
  c.classification = num("classification") != 0;
  c.inner_iters = int(num("inner_iters"));
  c.seed = std::stoul(kv.at("seed"));
  c.q = Index(num("q"));
  c.nu = Index(num("nu"));
  c.standardize = num("standardize") != 0;
  c.map_inputs = num("map_inputs") != 0;
  c.optimize_omega_u = num("optimize_omega_u") != 0;
  c.optimize_lengthscales = num("optimize_lengthscales") != 0;
  c.check_each_update = num("check_each_update") != 0;
  return c;
}

void put_gamma(ArchiveWriter& w, const std::string& name, double shape, double rate) {
  MatrixXd m(1, 2);
  m << shape, rate;
  w.matrix(name, m);
}

std::pair<double, double> get_gamma(const ArchiveReader& r, const std::string& name) {
  const MatrixXd& m = r.matrix(name);
  if (m.size() != 2) throw ParseError("record '" + name + "' is not a Gamma pair");
  return {m(0), m(1)};
}

}  // namespace

void save_model(const fs::path& path, const FittedModel& model) {
  ArchiveWriter w;
  MatrixXd dims(1, 5);
  dims << double(model.dims.N), double(model.dims.M), double(model.dims.Q), double(model.dims.S),
      double(model.dims.nu);
  w.matrix("dims", dims);
  w.text("config", fit_config_text(model.config));

  const HyperParams& h = model.hyper;
  w.matrix("hyper.lengthscales", to_vector(h.lengthscales));
  w.scalar("hyper.lengthscale_z", h.lengthscale_z);
  w.scalar("hyper.lengthscale_b", h.lengthscale_b);
  put_gamma(w, "hyper.omega_f", h.omega_f.shape, h.omega_f.rate);
  put_gamma(w, "hyper.omega_u", h.omega_u.shape, h.omega_u.rate);
  put_gamma(w, "hyper.lambda_w", h.lambda_w.shape, h.lambda_w.rate);
  put_gamma(w, "hyper.lambda_b", h.lambda_b.shape, h.lambda_b.rate);
  w.scalar("hyper.jitter", h.jitter);

  w.matrix("x", model.x);
  if (model.input_map) {
    w.matrix("input_map.offset", model.input_map->offset);
    w.matrix("input_map.scale", model.input_map->scale);
  }
  w.matrix("norm.mean", model.norm.mean);
  w.matrix("norm.scale", model.norm.scale);

  const VariationalState& s = model.state;
  w.matrix("state.mu_u", s.mu_u);
  w.matrix("state.sigma_u", s.sigma_u);
  w.scalar("state.log_det_sigma_u", s.log_det_sigma_u);
  w.matrix("state.mu_b", s.mu_b);
  w.matrix("state.sigma_b", s.sigma_b);
  w.scalar("state.log_det_sigma_b", s.log_det_sigma_b);
  put_gamma(w, "state.omega_f", s.omega_f.shape, s.omega_f.rate);
  w.scalar("state.classification", s.classification ? 1.0 : 0.0);
  if (s.classification) {
    w.matrix("state.mu_wb", s.mu_wb);
    w.matrix("state.sigma_wb", s.sigma_wb);
    w.scalar("state.log_det_sigma_wb", s.log_det_sigma_wb);
    put_gamma(w, "state.lambda_w", s.lambda_w.shape, s.lambda_w.rate);
    put_gamma(w, "state.lambda_b", s.lambda_b.shape, s.lambda_b.rate);
    w.matrix("state.h_location", s.h_location);
    w.matrix("state.h_mean", s.h_mean);
    w.matrix("state.h_second", s.h_second);
  }
  w.matrix("state.z", s.z.z);
  w.scalar("state.omega_u", s.omega_u);
  w.matrix("state.lengthscales", to_vector(s.lengthscales));

  MatrixXd trace(Index(model.trace.size()), 2);
  for (Index k = 0; k < trace.rows(); ++k) {
    trace(k, 0) = model.trace[k].iteration;
    trace(k, 1) = model.trace[k].elbo;
  }
  w.matrix("trace", trace);
  w.scalar("initial_elbo", model.initial_elbo);
  w.scalar("iterations", model.iterations);
  w.scalar("converged", model.converged ? 1.0 : 0.0);
  w.write(path);
}

FittedModel load_model(const fs::path& path) {
  const ArchiveReader r(path);
  FittedModel m;
  const MatrixXd& dims = r.matrix("dims");
  if (dims.size() != 5) throw ParseError(path.string() + ": malformed dims record");
  m.dims = {Index(dims(0)), Index(dims(1)), Index(dims(2)), Index(dims(3)), Index(dims(4))};
  m.dims.validate();
  try {
    m.config = parse_fit_config(r.text("config"));
  } catch (const std::out_of_range&) {
    throw ParseError(path.string() + ": incomplete config snapshot");
  }

  HyperParams& h = m.hyper;
  h.lengthscales = from_vector(r.matrix("hyper.lengthscales"));
  h.lengthscale_z = r.scalar("hyper.lengthscale_z");
  h.lengthscale_b = r.scalar("hyper.lengthscale_b");
  std::tie(h.omega_f.shape, h.omega_f.rate) = get_gamma(r, "hyper.omega_f");
  std::tie(h.omega_u.shape, h.omega_u.rate) = get_gamma(r, "hyper.omega_u");
  std::tie(h.lambda_w.shape, h.lambda_w.rate) = get_gamma(r, "hyper.lambda_w");
  std::tie(h.lambda_b.shape, h.lambda_b.rate) = get_gamma(r, "hyper.lambda_b");
  h.jitter = r.scalar("hyper.jitter");
  h.validate(m.dims.Q);

  m.x = r.matrix("x");
  if (r.has("input_map.offset")) {
    m.input_map = InputMap{r.matrix("input_map.offset"), r.matrix("input_map.scale")};
  }
  m.norm.mean = r.matrix("norm.mean");
  m.norm.scale = r.matrix("norm.scale");

  VariationalState& s = m.state;
  s.mu_u = r.matrix("state.mu_u");
  s.sigma_u = r.matrix("state.sigma_u");
  s.log_det_sigma_u = r.scalar("state.log_det_sigma_u");
  s.mu_b = r.matrix("state.mu_b");
  s.sigma_b = r.matrix("state.sigma_b");
  s.log_det_sigma_b = r.scalar("state.log_det_sigma_b");
  std::tie(s.omega_f.shape, s.omega_f.rate) = get_gamma(r, "state.omega_f");
  s.classification = r.scalar("state.classification") != 0.0;
  if (s.classification) {
    s.mu_wb = r.matrix("state.mu_wb");
    s.sigma_wb = r.matrix("state.sigma_wb");
    s.log_det_sigma_wb = r.scalar("state.log_det_sigma_wb");
    std::tie(s.lambda_w.shape, s.lambda_w.rate) = get_gamma(r, "state.lambda_w");
    std::tie(s.lambda_b.shape, s.lambda_b.rate) = get_gamma(r, "state.lambda_b");
    s.h_location = r.matrix("state.h_location");
    s.h_mean = r.matrix("state.h_mean");
    s.h_second = r.matrix("state.h_second");
  }
  s.z.z = r.matrix("state.z");
  s.z.n_signals = m.dims.Q;
  s.omega_u = r.scalar("state.omega_u");
  s.lengthscales = from_vector(r.matrix("state.lengthscales"));

  const Index nq = m.dims.nq();
  if (m.x.rows() != m.dims.N || s.mu_u.rows() != nq || s.mu_u.cols() != m.dims.S ||
      s.mu_b.rows() != nq || s.mu_b.cols() != m.dims.M || s.z.z.rows() != nq ||
      s.z.z.cols() != m.dims.nu || s.sigma_u.rows() != nq || s.sigma_b.rows() != nq ||
      m.norm.mean.size() != m.dims.M) {
    throw ParseError(path.string() + ": record shapes do not match the dimension header");
  }

  const MatrixXd& trace = r.matrix("trace");
  for (Index k = 0; k < trace.rows(); ++k) {
    TraceRecord rec;
    rec.iteration = int(trace(k, 0));
    rec.elbo = trace(k, 1);
    m.trace.push_back(rec);
  }
  m.initial_elbo = r.scalar("initial_elbo");
  m.iterations = int(r.scalar("iterations"));
  m.converged = r.scalar("converged") != 0.0;
  m.rebuild_caches();
  return m;
}

// ---- run configuration ----

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string unquote(const std::string& s) {
  const std::string t = trim(s);
  if (t.size() < 2 || t.front() != '"' || t.back() != '"') return t;
  std::string out;
  for (std::size_t k = 1; k + 1 < t.size(); ++k) {
    if (t[k] == '\\' && k + 2 < t.size()) ++k;
    out += t[k];
  }
  return out;
}

std::string list_text(const std::vector<std::string>& v) {
  std::string out = "[";
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + quote(v[k]);
  return out + "]";
}

std::vector<std::string> parse_list(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return {};
  if (t.front() != '[') return {unquote(t)};
  if (t.back() != ']') throw ParseError("unterminated list: " + t);
  std::vector<std::string> out;
  std::string cur;
  bool in_quote = false, escaped = false, any = false;
  for (std::size_t k = 1; k + 1 < t.size(); ++k) {
    const char c = t[k];
    if (escaped) {
      cur += c;
      escaped = false;
    } else if (c == '\\' && in_quote) {
      escaped = true;
    } else if (c == '"') {
      in_quote = !in_quote;
      any = true;
    } else if (c == ',' && !in_quote) {
      out.push_back(any ? cur : trim(cur));
      cur.clear();
      any = false;
    } else if (in_quote || !std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (any || !trim(cur).empty()) out.push_back(any ? cur : trim(cur));
  return out;
}

bool parse_bool(const std::string& s) {
  const std::string t = unquote(s);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ParseError("expected a boolean, got '" + t + "'");
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "command=" << quote(command) << "\n"
     << "data=" << list_text(data) << "\n"
     << "labels=" << quote(labels) << "\n"
     << "validation=" << list_text(validation) << "\n"
     << "q=" << q << "\n"
     << "nu=" << nu << "\n"
     << "lu=" << format_double(lu) << "\n"
     << "lb=" << format_double(lb) << "\n"
     << "lz=" << format_double(lz) << "\n"
     << "classify=" << (classify ? "true" : "false") << "\n"
     << "seed=" << seed << "\n"
     << "max-iters=" << max_iters << "\n"
     << "tol=" << format_double(tol) << "\n"
     << "out=" << quote(out) << "\n"
     << "model=" << quote(model) << "\n"
     << "preset=" << quote(preset) << "\n"
     << "format=" << quote(format) << "\n"
     << "samples=" << samples << "\n"
     << "points=" << points << "\n"
     << "map-inputs=" << (map_inputs ? "true" : "false") << "\n";
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    try {
      if (key == "command") c.command = unquote(value);
      else if (key == "data") c.data = parse_list(value);
      else if (key == "labels") c.labels = unquote(value);
      else if (key == "validation") c.validation = parse_list(value);
      else if (key == "q") c.q = std::stol(unquote(value));
      else if (key == "nu") c.nu = std::stol(unquote(value));
      else if (key == "lu") c.lu = std::stod(unquote(value));
      else if (key == "lb") c.lb = std::stod(unquote(value));
      else if (key == "lz") c.lz = std::stod(unquote(value));
      else if (key == "classify") c.classify = parse_bool(value);
      else if (key == "seed") c.seed = std::stoul(unquote(value));
      else if (key == "max-iters" || key == "max_iters") c.max_iters = std::stoi(unquote(value));
      else if (key == "tol") c.tol = std::stod(unquote(value));
      else if (key == "out") c.out = unquote(value);
      else if (key == "model") c.model = unquote(value);
      else if (key == "preset") c.preset = unquote(value);
      else if (key == "format") c.format = unquote(value);
      else if (key == "samples") c.samples = std::stol(unquote(value));
      else if (key == "points") c.points = std::stol(unquote(value));
      else if (key == "map-inputs" || key == "map_inputs") c.map_inputs = parse_bool(value);
      else throw ParseError("unknown key '" + key + "'");
    } catch (const ParseError& e) {
      throw ParseError("config line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception&) {
      throw ParseError("config line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }
  return c;
}

}  // namespace lcgp
