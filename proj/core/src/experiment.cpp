#include "hylite/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "hylite/rng.hpp"

namespace hylite {

namespace fs = std::filesystem;

std::string format_exact(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

// One row per key keeps parse, emit and set() in lockstep.
struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    fail(Err::InvalidConfig, key + " expects a non-negative integer, got \"" + v + "\"");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    fail(Err::InvalidConfig, key + " expects a non-negative integer, got \"" + v + "\"");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    fail(Err::InvalidConfig, key + " expects a number, got \"" + v + "\"");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(Err::InvalidConfig, key + " expects true/false, got \"" + v + "\"");
}

void expect_one_of(const std::string& key, const std::string& v,
                   std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (v == a) return;
  std::string msg = key + " must be one of {";
  bool first = true;
  for (const char* a : allowed) {
    if (!first) msg += ", ";
    msg += a;
    first = false;
  }
  fail(Err::InvalidConfig, msg + "}, got \"" + v + "\"");
}

#define STR_FIELD(name)                                                   \
  Field{#name, [](const ExperimentConfig& c) { return c.name; },          \
        [](ExperimentConfig& c, const std::string& v) { c.name = v; }}
#define ENUM_FIELD(name, ...)                                             \
  Field{#name, [](const ExperimentConfig& c) { return c.name; },          \
        [](ExperimentConfig& c, const std::string& v) {                   \
          expect_one_of(#name, v, {__VA_ARGS__});                         \
          c.name = v;                                                     \
        }}
#define SIZE_FIELD(name)                                                           \
  Field{#name, [](const ExperimentConfig& c) { return std::to_string(c.name); },   \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_size(#name, v); }}
#define DOUBLE_FIELD(name)                                                         \
  Field{#name, [](const ExperimentConfig& c) { return format_exact(c.name); },     \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_double(#name, v); }}
#define BOOL_FIELD(name)                                                           \
  Field{#name, [](const ExperimentConfig& c) { return c.name ? "true" : "false"; },\
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      STR_FIELD(cube),
      STR_FIELD(labels),
      STR_FIELD(train_split),
      STR_FIELD(test_split),
      STR_FIELD(class_names),
      ENUM_FIELD(normalize, "minmax", "zscore", "none"),
      SIZE_FIELD(patch),
      SIZE_FIELD(dim),
      SIZE_FIELD(blocks),
      SIZE_FIELD(heads),
      SIZE_FIELD(heads_local),
      SIZE_FIELD(ff_hidden),
      ENUM_FIELD(pos_mode, "learned", "fixed", "none"),
      ENUM_FIELD(attn_order, "spectral_first", "local_first"),
      ENUM_FIELD(token_axis, "spectral", "local"),
      ENUM_FIELD(fusion, "feature_level", "class_level"),
      BOOL_FIELD(caf),
      BOOL_FIELD(local_att),
      BOOL_FIELD(post_norm),
      SIZE_FIELD(epochs),
      SIZE_FIELD(batch),
      SIZE_FIELD(lr_step),
      SIZE_FIELD(eval_every),
      DOUBLE_FIELD(lr),
      DOUBLE_FIELD(weight_decay),
      DOUBLE_FIELD(lr_gamma),
      DOUBLE_FIELD(lambda),
      ENUM_FIELD(reg_mode, "centroid", "per_token"),
      BOOL_FIELD(decoupled_wd),
      Field{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
            [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      STR_FIELD(out),
      SIZE_FIELD(synth_h),
      SIZE_FIELD(synth_w),
      SIZE_FIELD(synth_bands),
      SIZE_FIELD(synth_classes),
      SIZE_FIELD(synth_train_per_class),
      DOUBLE_FIELD(synth_noise),
      DOUBLE_FIELD(synth_texture_amp),
  };
  return fields;
}

#undef STR_FIELD
#undef ENUM_FIELD
#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  f << text;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : schema()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  fail(Err::UnknownKey, "unknown config key \"" + key + "\"");
}

std::string ExperimentConfig::emit() const {
  std::string out;
  for (const Field& f : schema()) {
    out += f.key;
    out += " = ";
    out += f.get(*this);
    out += "\n";
  }
  return out;
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(Err::InvalidConfig, "line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Err::Io, "cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

ModelConfig ExperimentConfig::model_config(std::size_t bands, std::size_t classes) const {
  ModelConfig mc;
  mc.m = bands;
  mc.p = patch;
  mc.d = dim;
  mc.blocks = blocks;
  mc.heads = heads;
  mc.heads_local = heads_local;
  mc.classes = classes;
  mc.ff_hidden = ff_hidden;
  mc.pos_mode = pos_mode == "learned" ? PosMode::learned
                : pos_mode == "fixed" ? PosMode::fixed
                                      : PosMode::none;
  mc.attn_order =
      attn_order == "spectral_first" ? AttnOrder::spectral_first : AttnOrder::local_first;
  mc.token_axis = token_axis == "spectral" ? TokenAxis::spectral : TokenAxis::local;
  mc.fusion = fusion == "feature_level" ? FusionMode::feature_level : FusionMode::class_level;
  mc.caf = caf;
  mc.local_att = local_att;
  mc.post_norm = post_norm;
  mc.validate();
  return mc;
}

TrainOptions ExperimentConfig::train_options() const {
  TrainOptions opt;
  opt.epochs = epochs;
  opt.batch_size = batch;
  opt.lr = lr;
  opt.lr_gamma = lr_gamma;
  opt.lr_step = lr_step;
  opt.adam.weight_decay = weight_decay;
  opt.adam.decoupled = decoupled_wd;
  opt.lambda = lambda;
  opt.reg_mode = reg_mode == "centroid" ? RegMode::centroid : RegMode::per_token;
  opt.seed = seed;
  opt.eval_every = eval_every;
  return opt;
}

Normalize ExperimentConfig::normalize_mode() const {
  if (normalize == "minmax") return Normalize::minmax;
  if (normalize == "zscore") return Normalize::zscore;
  return Normalize::none;
}

LoadedData load_data(const ExperimentConfig& cfg) {
  if (cfg.cube.empty() || cfg.labels.empty() || cfg.train_split.empty() ||
      cfg.test_split.empty())
    fail(Err::InvalidConfig, "config must name cube, labels, train_split and test_split");
  LoadedData data;
  data.cube = normalize_bands(load_cube(cfg.cube, cfg.labels), cfg.normalize_mode());
  data.train = load_split(cfg.train_split);
  data.test = load_split(cfg.test_split);
  validate_split(data.cube, data.train);
  validate_split(data.cube, data.test);
  if (!cfg.class_names.empty()) {
    std::ifstream f(cfg.class_names);
    if (!f) fail(Err::Io, "cannot open class names " + cfg.class_names);
    std::string line;
    while (std::getline(f, line)) data.class_names.push_back(trim(line));
  }
  return data;
}

namespace {

void write_report_files(const EvalReport& report, const std::vector<std::string>& names,
                        const fs::path& dir) {
  write_metrics_csv(report, (dir / "metrics.csv").string());
  write_per_class_csv(report, (dir / "per_class.csv").string(), names);
  write_confusion_csv(report, (dir / "confusion.csv").string());
}

EvalReport train_once(const ExperimentConfig& cfg, const LoadedData& data,
                      const SplitList& train_split, const std::string& out_dir,
                      std::uint64_t seed_override = ~std::uint64_t{0}) {
  const std::uint64_t seed = seed_override == ~std::uint64_t{0} ? cfg.seed : seed_override;
  Model model = Model::init(cfg.model_config(data.cube.m, data.cube.num_classes()), seed);
  TrainOptions opt = cfg.train_options();
  opt.seed = seed;
  opt.out_dir = out_dir;
  TrainResult res = train(model, data.cube, train_split, data.test, opt);
  if (!out_dir.empty()) {
    const fs::path dir(out_dir);
    write_report_files(res.final_report, data.class_names, dir);
    write_predictions_csv(data.test, res.final_predictions,
                          (dir / "predictions.csv").string());
  }
  return res.final_report;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::scoped_lock lk(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void write_variant_csv(const std::vector<RunResult>& rows, const std::string& path,
                       const char* key_column) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  f << key_column << ",oa,aa,kappa\n";
  for (const RunResult& r : rows)
    f << r.variant << "," << format_double(r.report.oa) << "," << format_double(r.report.aa)
      << "," << format_double(r.report.kappa) << "\n";
}

}  // namespace

EvalReport run_train(const ExperimentConfig& cfg, const std::string& run_dir) {
  fs::create_directories(run_dir);
  write_text((fs::path(run_dir) / "resolved_config.txt").string(), cfg.emit());
  const LoadedData data = load_data(cfg);
  return train_once(cfg, data, data.train, run_dir);
}

EvalReport run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    const std::string& run_dir) {
  fs::create_directories(run_dir);
  write_text((fs::path(run_dir) / "resolved_config.txt").string(), cfg.emit());
  const LoadedData data = load_data(cfg);
  Model model = Model::init(cfg.model_config(data.cube.m, data.cube.num_classes()), cfg.seed);
  load_checkpoint(model.params, checkpoint_path);
  const auto preds = predict(model, data.cube, data.test, cfg.batch);
  std::vector<int> truths;
  truths.reserve(data.test.size());
  for (const SplitEntry& e : data.test) truths.push_back(static_cast<int>(e.cls) - 1);
  EvalReport report = evaluate(preds, truths, model.config.classes);
  write_report_files(report, data.class_names, fs::path(run_dir));
  write_predictions_csv(data.test, preds, (fs::path(run_dir) / "predictions.csv").string());
  return report;
}

std::vector<RunResult> run_ablate(const ExperimentConfig& cfg, const std::string& axis,
                                  const std::string& run_dir, std::size_t jobs) {
  struct Variant {
    std::string name;
    std::function<void(ExperimentConfig&)> apply;
  };
  std::vector<Variant> variants;
  if (axis == "pos") {
    for (const char* v : {"none", "fixed", "learned"})
      variants.push_back({v, [v](ExperimentConfig& c) { c.pos_mode = v; }});
  } else if (axis == "order") {
    for (const char* v : {"local_first", "spectral_first"})
      variants.push_back({v, [v](ExperimentConfig& c) { c.attn_order = v; }});
  } else if (axis == "token_axis") {
    for (const char* v : {"spectral", "local"})
      variants.push_back({v, [v](ExperimentConfig& c) { c.token_axis = v; }});
  } else if (axis == "fusion") {
    for (const char* v : {"class_level", "feature_level"})
      variants.push_back({v, [v](ExperimentConfig& c) { c.fusion = v; }});
  } else if (axis == "components") {
    const double lam = cfg.lambda > 0 ? cfg.lambda : 1.0;
    for (bool att : {false, true})
      for (bool reg : {false, true}) {
        std::string name = std::string("local_att=") + (att ? "on" : "off") +
                           " local_reg=" + (reg ? "on" : "off");
        variants.push_back({name, [att, reg, lam](ExperimentConfig& c) {
                              c.local_att = att;
                              c.lambda = reg ? lam : 0.0;
                            }});
      }
  } else {
    fail(Err::UnknownAxis, "ablation axis \"" + axis + "\" (expected pos, order, token_axis, "
                           "fusion or components)");
  }

  fs::create_directories(run_dir);
  write_text((fs::path(run_dir) / "resolved_config.txt").string(), cfg.emit());
  const LoadedData data = load_data(cfg);

  std::vector<RunResult> rows(variants.size());
  parallel_for(variants.size(), jobs, [&](std::size_t i) {
    ExperimentConfig sub = cfg;
    variants[i].apply(sub);
    const fs::path dir = fs::path(run_dir) / ("variant_" + std::to_string(i));
    fs::create_directories(dir);
    write_text((dir / "resolved_config.txt").string(), sub.emit());
    rows[i] = {variants[i].name, train_once(sub, data, data.train, dir.string())};
  });
  write_variant_csv(rows, (fs::path(run_dir) / ("ablation_" + axis + ".csv")).string(),
                    "variant");
  return rows;
}

std::vector<double> default_lambda_grid() { return {0.1, 0.5, 1.0, 2.0, 5.0, 10.0}; }

std::vector<RunResult> run_sweep_lambda(const ExperimentConfig& cfg,
                                        const std::vector<double>& values,
                                        const std::string& run_dir, std::size_t jobs) {
  for (double v : values)
    if (v < 0) fail(Err::NegativeLambda, "lambda = " + format_exact(v));
  fs::create_directories(run_dir);
  write_text((fs::path(run_dir) / "resolved_config.txt").string(), cfg.emit());
  const LoadedData data = load_data(cfg);

  std::vector<RunResult> rows(values.size());
  parallel_for(values.size(), jobs, [&](std::size_t i) {
    ExperimentConfig sub = cfg;
    sub.lambda = values[i];
    const fs::path dir = fs::path(run_dir) / ("lambda_" + format_exact(values[i]));
    fs::create_directories(dir);
    write_text((dir / "resolved_config.txt").string(), sub.emit());
    rows[i] = {format_exact(values[i]), train_once(sub, data, data.train, dir.string())};
  });
  write_variant_csv(rows, (fs::path(run_dir) / "lambda_sweep.csv").string(), "lambda");
  return rows;
}

std::vector<CurvePoint> run_subsample_curve(const ExperimentConfig& cfg,
                                            const std::vector<double>& fractions,
                                            std::size_t repeats, const std::string& run_dir,
                                            std::size_t jobs) {
  if (repeats == 0) fail(Err::InvalidConfig, "repeats must be >= 1");
  fs::create_directories(run_dir);
  write_text((fs::path(run_dir) / "resolved_config.txt").string(), cfg.emit());
  const LoadedData data = load_data(cfg);

  struct Task {
    std::size_t fi, rep;
  };
  std::vector<Task> tasks;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi)
    for (std::size_t rep = 0; rep < repeats; ++rep) tasks.push_back({fi, rep});

  std::vector<double> oas(tasks.size(), 0.0);
  parallel_for(tasks.size(), jobs, [&](std::size_t ti) {
    const Task t = tasks[ti];
    const std::uint64_t run_seed = Rng::mix(cfg.seed, t.rep);
    const SplitList sub = subsample_split(data.train, fractions[t.fi], run_seed);
    const fs::path dir = fs::path(run_dir) / ("fraction_" + format_exact(fractions[t.fi]) +
                                              "_rep" + std::to_string(t.rep));
    fs::create_directories(dir);
    oas[ti] = train_once(cfg, data, sub, dir.string(), run_seed).oa;
  });

  std::vector<CurvePoint> points;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    CurvePoint p;
    p.fraction = fractions[fi];
    double sum = 0.0;
    for (std::size_t rep = 0; rep < repeats; ++rep) sum += oas[fi * repeats + rep];
    p.mean_oa = sum / static_cast<double>(repeats);
    double ss = 0.0;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      const double d = oas[fi * repeats + rep] - p.mean_oa;
      ss += d * d;
    }
    p.std_oa = std::sqrt(ss / static_cast<double>(repeats));
    points.push_back(p);
  }

  std::ofstream f((fs::path(run_dir) / "subsample_curve.csv").string(), std::ios::trunc);
  if (!f) fail(Err::Io, "cannot write subsample_curve.csv");
  f << "fraction,mean_oa,std_oa\n";
  for (const CurvePoint& p : points)
    f << format_exact(p.fraction) << "," << format_double(p.mean_oa) << ","
      << format_double(p.std_oa) << "\n";
  return points;
}

void run_synth(const ExperimentConfig& cfg, const std::string& run_dir) {
  fs::create_directories(run_dir);
  HsiCube cube = synth_generate(cfg.synth_h, cfg.synth_w, cfg.synth_bands, cfg.synth_classes,
                                cfg.synth_noise, cfg.seed, cfg.synth_texture_amp);
  const fs::path dir(run_dir);
  save_cube(cube, (dir / "synth.hsib").string(), (dir / "synth.hsil").string());
  SplitPair split = make_split(cube, cfg.synth_train_per_class, Rng::mix(cfg.seed, 1));
  save_split(split.train, (dir / "train.split").string());
  save_split(split.test, (dir / "test.split").string());

  ExperimentConfig resolved = cfg;
  resolved.cube = (dir / "synth.hsib").string();
  resolved.labels = (dir / "synth.hsil").string();
  resolved.train_split = (dir / "train.split").string();
  resolved.test_split = (dir / "test.split").string();
  write_text((dir / "resolved_config.txt").string(), resolved.emit());
}

}  // namespace hylite
