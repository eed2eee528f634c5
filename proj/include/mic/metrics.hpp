#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mic {

/// k x k counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}

  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const {
    return counts[truth * k + pred];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k; ++i) t += (*this)(i, i);
    return t;
  }

  void merge(const ConfusionMatrix& o) {
    if (o.k != k) throw std::invalid_argument("confusion matrix size mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  }

  // Binary view with class 1 as the positive class.
  std::uint64_t tp() const { return (*this)(1, 1); }
  std::uint64_t tn() const { return (*this)(0, 0); }
  std::uint64_t fp() const { return (*this)(0, 1); }
  std::uint64_t fn() const { return (*this)(1, 0); }

  static ConfusionMatrix binary(std::uint64_t tp, std::uint64_t tn, std::uint64_t fp,
                                std::uint64_t fn) {
    ConfusionMatrix cm(2);
    cm(1, 1) = tp;
    cm(0, 0) = tn;
    cm(0, 1) = fp;
    cm(1, 0) = fn;
    return cm;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

template <typename LabelRange, typename PredRange>
ConfusionMatrix confusion(const LabelRange& labels, const PredRange& preds, std::size_t k) {
  if (std::size(labels) != std::size(preds))
    throw std::invalid_argument("confusion: labels and predictions differ in length");
  ConfusionMatrix cm(k);
  auto p = std::begin(preds);
  for (auto y : labels) {
    const auto yh = *p++;
    if (y < 0 || yh < 0 || std::size_t(y) >= k || std::size_t(yh) >= k)
      throw std::out_of_range("confusion: class index outside [0," + std::to_string(k) + ")");
    ++cm(std::size_t(y), std::size_t(yh));
  }
  return cm;
}

/// trace / total, i.e. (TP + TN) / (TP + FP + TN + FN) for two classes.
inline double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("accuracy of an empty confusion matrix");
  return double(cm.trace()) / double(total);
}

// ---------------------------------------------------------------------------

struct HistoryRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  bool operator==(const HistoryRow&) const = default;
};

struct TrainingHistory {
  std::vector<HistoryRow> rows;
  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
};

inline constexpr const char* kHistoryHeader = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string history_to_csv(const TrainingHistory& h) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& r : h.rows) {
    out += std::to_string(r.epoch) + "," + fixed6(r.lr) + "," + fixed6(r.train_loss) + "," +
           fixed6(r.train_acc) + "," + fixed6(r.val_loss) + "," + fixed6(r.val_acc) + "\n";
  }
  return out;
}

inline TrainingHistory history_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHistoryHeader)
    throw std::runtime_error("history line 1: expected header '" + std::string(kHistoryHeader) +
                             "'");
  TrainingHistory h;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    HistoryRow r;
    char tail = 0;
    const int got = std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf%c", &r.epoch, &r.lr,
                                &r.train_loss, &r.train_acc, &r.val_loss, &r.val_acc, &tail);
    if (got != 6)
      throw std::runtime_error("history line " + std::to_string(lineno) + ": malformed row '" +
                               line + "'");
    h.rows.push_back(r);
  }
  return h;
}

inline void write_history_csv(const TrainingHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << history_to_csv(h);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline TrainingHistory read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return history_from_csv(ss.str());
}

// ---------------------------------------------------------------------------
// Two-panel SVG: loss on the left, accuracy on the right.

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Panel {
  double x0, y0, w, h;
  double lo, hi;
  int epochs;

  double px(int epoch) const {
    return epochs <= 1 ? x0 + w / 2 : x0 + w * double(epoch - 1) / double(epochs - 1);
  }
  double py(double v) const { return y0 + h - h * (v - lo) / (hi - lo); }
};

inline void render_panel(std::ostringstream& os, const Panel& p, const std::string& title,
                         const std::string& ylabel, const std::vector<double>& train,
                         const std::vector<double>& val) {
  os << "<rect x=\"" << fmt2(p.x0) << "\" y=\"" << fmt2(p.y0) << "\" width=\"" << fmt2(p.w)
     << "\" height=\"" << fmt2(p.h) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  os << "<text x=\"" << fmt2(p.x0 + p.w / 2) << "\" y=\"" << fmt2(p.y0 - 12)
     << "\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<text x=\"" << fmt2(p.x0 + p.w / 2) << "\" y=\"" << fmt2(p.y0 + p.h + 36)
     << "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
  os << "<text x=\"" << fmt2(p.x0 - 44) << "\" y=\"" << fmt2(p.y0 + p.h / 2)
     << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 " << fmt2(p.x0 - 44)
     << " " << fmt2(p.y0 + p.h / 2) << ")\">" << ylabel << "</text>\n";
  const int step = std::max(1, p.epochs / 10);
  for (int e = 1; e <= p.epochs; e += step) {
    os << "<line x1=\"" << fmt2(p.px(e)) << "\" y1=\"" << fmt2(p.y0 + p.h) << "\" x2=\""
       << fmt2(p.px(e)) << "\" y2=\"" << fmt2(p.y0 + p.h + 5) << "\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << fmt2(p.px(e)) << "\" y=\"" << fmt2(p.y0 + p.h + 18)
       << "\" text-anchor=\"middle\" font-size=\"10\">" << e << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = p.lo + (p.hi - p.lo) * t / 4.0;
    os << "<text x=\"" << fmt2(p.x0 - 6) << "\" y=\"" << fmt2(p.py(v) + 3)
       << "\" text-anchor=\"end\" font-size=\"10\">" << fmt2(v) << "</text>\n";
  }
  auto polyline = [&](const std::vector<double>& ys, const char* color, const char* cls) {
    os << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (i) os << ' ';
      os << fmt2(p.px(int(i) + 1)) << ',' << fmt2(p.py(ys[i]));
    }
    os << "\"/>\n";
  };
  polyline(train, "#1f77b4", "train");
  polyline(val, "#ff7f0e", "val");
}

}  // namespace detail

inline std::string render_curves_svg(const TrainingHistory& h) {
  if (h.empty()) throw std::invalid_argument("cannot render an empty history");
  std::vector<double> tl, vl, ta, va;
  for (const auto& r : h.rows) {
    tl.push_back(r.train_loss);
    vl.push_back(r.val_loss);
    ta.push_back(r.train_acc);
    va.push_back(r.val_acc);
  }
  double lmax = 0.0;
  for (double v : tl) lmax = std::max(lmax, v);
  for (double v : vl) lmax = std::max(lmax, v);
  if (lmax <= 0.0) lmax = 1.0;
  const int epochs = int(h.rows.size());
  const detail::Panel loss{70, 40, 380, 260, 0.0, lmax * 1.05, epochs};
  const detail::Panel acc{570, 40, 380, 260, 0.0, 1.0, epochs};

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"1000\" "
        "height=\"360\" viewBox=\"0 0 1000 360\">\n"
     << "<rect width=\"1000\" height=\"360\" fill=\"white\"/>\n";
  detail::render_panel(os, loss, "Training and validation loss", "loss", tl, vl);
  detail::render_panel(os, acc, "Training and validation accuracy", "accuracy", ta, va);
  os << "<text x=\"930\" y=\"20\" font-size=\"11\" fill=\"#1f77b4\" text-anchor=\"end\">train"
        "</text>\n"
     << "<text x=\"970\" y=\"20\" font-size=\"11\" fill=\"#ff7f0e\" text-anchor=\"end\">val"
        "</text>\n"
     << "</svg>\n";
  return os.str();
}

inline void render_curves_svg(const TrainingHistory& h, const std::filesystem::path& path) {
  const std::string svg = render_curves_svg(h);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg;
}

}  // namespace mic
