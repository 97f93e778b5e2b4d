#include "ssgrn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "ssgrn/data.hpp"
#include "ssgrn/error.hpp"
#include "ssgrn/log.hpp"
#include "ssgrn/metrics.hpp"
#include "ssgrn/network.hpp"
#include "ssgrn/pixmap.hpp"
#include "ssgrn/trainer.hpp"

namespace ssgrn::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw std::invalid_argument(where + ": expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(where + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw std::invalid_argument(where + ": duplicate key '" + key + "' (first set on line " +
                                  std::to_string(it->second) + ")");
    }
    cfg.entries.push_back({key, value, line_no});
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  return parse(in, path.string());
}

namespace {

struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::vector<std::string> required;
  std::function<void()> action;
};

/// Applies config entries to options not set on the command line.
void merge_config(Command& cmd) {
  if (cmd.config_path.empty()) return;
  const auto cfg = RunConfig::load(cmd.config_path);
  for (const auto& e : cfg.entries) {
    CLI::Option* opt = e.key == "config" ? nullptr : cmd.app->get_option_no_throw("--" + e.key);
    if (!opt) {
      throw std::invalid_argument(cmd.config_path + ":" + std::to_string(e.line) + ": unknown key '" + e.key +
                                  "' for command '" + cmd.app->get_name() + "'");
    }
    if (opt->count() > 0) continue;
    opt->add_result(e.value);
    opt->run_callback();
  }
}

void check_required(const Command& cmd) {
  for (const auto& name : cmd.required) {
    if (cmd.app->get_option("--" + name)->count() == 0) {
      throw std::invalid_argument("command '" + cmd.app->get_name() + "' requires --" + name);
    }
  }
}

sagrn::PoolMode parse_pool(const std::string& s) {
  if (s == "soft") return sagrn::PoolMode::soft;
  if (s == "hard") return sagrn::PoolMode::hard;
  throw std::invalid_argument("pool mode must be soft or hard, got '" + s + "'");
}

std::array<std::size_t, 3> parse_widths(const std::string& s) {
  std::array<std::size_t, 3> w{};
  std::istringstream ss(s);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) throw std::invalid_argument("--widths takes three comma-separated values");
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument("");
      w[i++] = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw std::invalid_argument("--widths: '" + part + "' is not a positive integer");
    }
  }
  if (i != 3) throw std::invalid_argument("--widths takes three comma-separated values");
  return w;
}

data::Subset parse_subset(const std::string& s) {
  if (s == "train") return data::Subset::train;
  if (s == "val") return data::Subset::val;
  if (s == "test") return data::Subset::test;
  throw std::invalid_argument("subset must be train, val or test, got '" + s + "'");
}

void require_match(const data::HsiCube& cube, const data::LabelMap& labels) {
  if (cube.height != labels.height || cube.width != labels.width) {
    throw std::invalid_argument("cube is " + std::to_string(cube.height) + "x" + std::to_string(cube.width) +
                                " but labels are " + std::to_string(labels.height) + "x" +
                                std::to_string(labels.width));
  }
}

void require_model_fits(const ModelState& model, const data::HsiCube& cube) {
  const auto& c = model.config;
  if (cube.height != c.height || cube.width != c.width || cube.bands != c.in_bands) {
    throw std::invalid_argument("cube is " + std::to_string(cube.height) + "x" + std::to_string(cube.width) + "x" +
                                std::to_string(cube.bands) + " but the checkpoint expects " +
                                std::to_string(c.height) + "x" + std::to_string(c.width) + "x" +
                                std::to_string(c.in_bands));
  }
}

template <typename T>
void write_matrix_csv(const std::filesystem::path& path, const Tensor<T>& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  char buf[32];
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(m.data()[r * cols + c]));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral-spatial graph reasoning for hyperspectral image classification", "ssgrn"};
  app.set_help_flag("--help", "Print this help message and exit");  // --h is the height flag
  app.require_subcommand(1);
  std::map<CLI::App*, Command> commands;
  const auto add_command = [&](const char* name, const char* help) -> Command& {
    auto* sub = app.add_subcommand(name, help);
    auto& cmd = commands[sub];
    cmd.app = sub;
    sub->add_option("--config", cmd.config_path, "key = value file; command-line flags win");
    return cmd;
  };

  // synth
  struct {
    std::string out;
    std::size_t h = 48, w = 48, bands = 12, classes = 4;
    double noise = 0.1;
    std::uint64_t seed = 0;
  } synth;
  {
    auto& cmd = add_command("synth", "Generate a synthetic labeled scene (<out>.cube, <out>.lab)");
    auto* a = cmd.app;
    a->add_option("--out", synth.out, "Output path prefix");
    a->add_option("--h", synth.h, "Height")->capture_default_str();
    a->add_option("--w", synth.w, "Width")->capture_default_str();
    a->add_option("--bands", synth.bands, "Spectral bands")->capture_default_str();
    a->add_option("--classes", synth.classes, "Classes (at most 16)")->capture_default_str();
    a->add_option("--noise", synth.noise, "Noise standard deviation")->capture_default_str();
    a->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    cmd.required = {"out"};
    cmd.action = [&] {
      const auto [cube, labels] = data::synth_scene(synth.h, synth.w, synth.bands, synth.classes, synth.noise,
                                                    synth.seed);
      data::save_cube(cube, synth.out + ".cube");
      data::save_labels(labels, synth.out + ".lab");
      out << "wrote " << synth.out << ".cube and " << synth.out << ".lab\n";
    };
  }

  // split
  struct {
    std::string labels, counts, out;
    std::uint64_t seed = 0;
  } split;
  {
    auto& cmd = add_command("split", "Draw a per-class train/val/test split");
    auto* a = cmd.app;
    a->add_option("--labels", split.labels, "Label map");
    a->add_option("--counts", split.counts, "Per-class '<class> <train> <val>' file (default 80/20)");
    a->add_option("--seed", split.seed, "Random seed")->capture_default_str();
    a->add_option("--out", split.out, "Split file to write");
    cmd.required = {"labels", "out"};
    cmd.action = [&] {
      const auto labels = data::load_labels(split.labels);
      const auto counts = split.counts.empty() ? data::default_counts(labels) : data::load_counts(split.counts);
      const auto spec = data::make_split(labels, counts, split.seed);
      data::save_split(spec, labels, split.out);
      out << "train " << spec.count(data::Subset::train) << " val " << spec.count(data::Subset::val) << " test "
          << spec.count(data::Subset::test) << '\n';
    };
  }

  // train
  struct {
    std::string cube, labels, split, out, history, model = "ssgrn", widths = "64,128,256", eval_pool = "soft";
    std::size_t iters = 1000, descriptors = 256, spectral_descriptors = 256, head_hidden = 128, stride = 4;
    std::size_t slic_iters = 5, eval_every = 100;
    double lr = 1e-3, momentum = 0.9, weight_decay = 1e-4, power = 0.9, compactness = 0.5, temperature = 0.1;
    std::uint64_t seed = 0;
    bool quiet = false;
  } tr;
  {
    auto& cmd = add_command("train", "Train a model on the train subset of a split");
    auto* a = cmd.app;
    a->add_option("--cube", tr.cube, "Hyperspectral cube");
    a->add_option("--labels", tr.labels, "Label map");
    a->add_option("--split", tr.split, "Split file");
    a->add_option("--out", tr.out, "Checkpoint to write");
    a->add_option("--history", tr.history, "History CSV (default <out>.history.csv)");
    a->add_option("--model", tr.model, "fcn | sagrn | segrn | ssgrn")->capture_default_str();
    a->add_option("--iters", tr.iters, "Training iterations")->capture_default_str();
    a->add_option("--lr", tr.lr, "Base learning rate")->capture_default_str();
    a->add_option("--momentum", tr.momentum, "SGD momentum")->capture_default_str();
    a->add_option("--weight-decay", tr.weight_decay, "Weight decay on weights")->capture_default_str();
    a->add_option("--power", tr.power, "Poly schedule power")->capture_default_str();
    a->add_option("--descriptors", tr.descriptors, "Spatial descriptors K")->capture_default_str();
    a->add_option("--spectral-descriptors", tr.spectral_descriptors, "Spectral descriptors M")
        ->capture_default_str();
    a->add_option("--widths", tr.widths, "Backbone widths a,b,c")->capture_default_str();
    a->add_option("--head-hidden", tr.head_hidden, "Classifier head width")->capture_default_str();
    a->add_option("--stride", tr.stride, "Spectral downsampling stride")->capture_default_str();
    a->add_option("--slic-iters", tr.slic_iters, "Superpixel iterations")->capture_default_str();
    a->add_option("--compactness", tr.compactness, "Superpixel position weight")->capture_default_str();
    a->add_option("--temperature", tr.temperature, "Superpixel softmax temperature")->capture_default_str();
    a->add_option("--eval-pool", tr.eval_pool, "Descriptor pooling at evaluation: soft | hard")
        ->capture_default_str();
    a->add_option("--eval-every", tr.eval_every, "Validation interval (0 = off)")->capture_default_str();
    a->add_option("--seed", tr.seed, "Initialization seed")->capture_default_str();
    a->add_flag("--quiet", tr.quiet, "No progress lines");
    cmd.required = {"cube", "labels", "split", "out"};
    cmd.action = [&] {
      const auto cube = data::load_cube(tr.cube);
      const auto labels = data::load_labels(tr.labels);
      require_match(cube, labels);
      const auto spec = data::load_split(tr.split, labels);
      if (labels.max_label() == 0) throw std::invalid_argument("label map has no labeled pixels");

      ModelConfig mc;
      mc.in_bands = cube.bands;
      mc.height = cube.height;
      mc.width = cube.width;
      mc.widths = parse_widths(tr.widths);
      mc.descriptors = tr.descriptors;
      mc.spectral_descriptors = tr.spectral_descriptors;
      mc.classes = labels.max_label();
      mc.variant = parse_variant(tr.model);
      mc.slic.iters = tr.slic_iters;
      mc.slic.compactness = tr.compactness;
      mc.slic.temperature = tr.temperature;
      mc.spectral_stride = tr.stride;
      mc.head_hidden = tr.head_hidden;
      mc.eval_pool = parse_pool(tr.eval_pool);

      train::TrainConfig tc;
      tc.base_lr = tr.lr;
      tc.momentum = tr.momentum;
      tc.weight_decay = tr.weight_decay;
      tc.max_iter = tr.iters;
      tc.power = tr.power;
      tc.seed = tr.seed;
      tc.eval_every = tr.eval_every;

      ModelState model(mc, tc.seed);
      const auto history = train::train(model, cube, labels, spec, tc, [&](const train::HistoryRow& row) {
        if (tr.quiet || !row.val_oa) return;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "iter %zu lr %.6g loss %.6f val_oa %.4f\n", row.iter, row.lr, row.loss,
                      *row.val_oa);
        out << buf << std::flush;
      });
      save_checkpoint(model, tr.out);
      const auto history_path = tr.history.empty() ? tr.out + ".history.csv" : tr.history;
      std::ofstream hs(history_path);
      if (!hs) throw std::runtime_error("cannot open '" + history_path + "' for writing");
      train::write_history_csv(hs, history);
      out << "wrote " << tr.out << " and " << history_path << '\n';
    };
  }

  // eval
  struct {
    std::string ckpt, cube, labels, split, report, confusion, subset = "test", pool;
  } ev;
  {
    auto& cmd = add_command("eval", "Score a checkpoint on one subset of a split");
    auto* a = cmd.app;
    a->add_option("--ckpt", ev.ckpt, "Checkpoint");
    a->add_option("--cube", ev.cube, "Hyperspectral cube");
    a->add_option("--labels", ev.labels, "Label map");
    a->add_option("--split", ev.split, "Split file");
    a->add_option("--report", ev.report, "Metric report to write");
    a->add_option("--confusion", ev.confusion, "Confusion CSV (default <report>.confusion.csv)");
    a->add_option("--subset", ev.subset, "train | val | test")->capture_default_str();
    a->add_option("--pool", ev.pool, "soft | hard (default: checkpoint setting)");
    cmd.required = {"ckpt", "cube", "labels", "split", "report"};
    cmd.action = [&] {
      const auto model = load_checkpoint(ev.ckpt);
      const auto cube = data::load_cube(ev.cube);
      const auto labels = data::load_labels(ev.labels);
      require_match(cube, labels);
      require_model_fits(model, cube);
      if (labels.max_label() > model.config.classes) {
        throw std::invalid_argument("labels use class " + std::to_string(labels.max_label()) +
                                    " but the checkpoint has " + std::to_string(model.config.classes) + " classes");
      }
      const auto spec = data::load_split(ev.split, labels);
      const auto subset = parse_subset(ev.subset);
      const auto pool = ev.pool.empty() ? model.config.eval_pool : parse_pool(ev.pool);
      const auto pred = predict_labels(model, cube, ForwardOptions{.pool = pool});
      const data::LabelMap pred_map{labels.height, labels.width, pred};
      const auto cm = metrics::accumulate(pred_map, labels, model.config.classes, &spec, subset);
      if (cm.total() == 0) {
        throw std::invalid_argument(std::string("subset '") + data::subset_name(subset) +
                                    "' holds no labeled pixels");
      }
      const std::vector<metrics::RunMetrics> runs{metrics::evaluate(cm)};
      const auto summary = metrics::aggregate_runs(runs);
      std::ofstream rs(ev.report);
      if (!rs) throw std::runtime_error("cannot open '" + ev.report + "' for writing");
      metrics::write_report(rs, summary);
      const auto confusion_path = ev.confusion.empty() ? ev.report + ".confusion.csv" : ev.confusion;
      std::ofstream cs(confusion_path);
      if (!cs) throw std::runtime_error("cannot open '" + confusion_path + "' for writing");
      metrics::write_confusion_csv(cs, cm);
      char buf[128];
      std::snprintf(buf, sizeof(buf), "OA %.4f AA %.4f Kappa %.4f (%llu pixels)\n", runs[0].oa, runs[0].aa,
                    runs[0].kappa, static_cast<unsigned long long>(cm.total()));
      out << buf;
    };
  }

  // predict
  struct {
    std::string ckpt, cube, out, mask, pool;
  } pr;
  {
    auto& cmd = add_command("predict", "Write a color classification map (binary PPM)");
    auto* a = cmd.app;
    a->add_option("--ckpt", pr.ckpt, "Checkpoint");
    a->add_option("--cube", pr.cube, "Hyperspectral cube");
    a->add_option("--out", pr.out, "PPM file to write");
    a->add_option("--mask", pr.mask, "Label map; its unlabeled pixels are drawn black");
    a->add_option("--pool", pr.pool, "soft | hard (default: checkpoint setting)");
    cmd.required = {"ckpt", "cube", "out"};
    cmd.action = [&] {
      const auto model = load_checkpoint(pr.ckpt);
      const auto cube = data::load_cube(pr.cube);
      require_model_fits(model, cube);
      const auto pool = pr.pool.empty() ? model.config.eval_pool : parse_pool(pr.pool);
      auto pred = predict_labels(model, cube, ForwardOptions{.pool = pool});
      if (!pr.mask.empty()) {
        const auto mask = data::load_labels(pr.mask);
        require_match(cube, mask);
        for (std::size_t i = 0; i < pred.size(); ++i) {
          if (mask.labels[i] == 0) pred[i] = 0;
        }
      }
      pixmap::save_ppm(pr.out, cube.height, cube.width, pred);
      out << "wrote " << pr.out << '\n';
    };
  }

  // inspect
  struct {
    std::string ckpt, cube, what, out, pool;
  } in;
  {
    auto& cmd = add_command("inspect", "Dump superpixels (PGM) or affinity rows (CSV)");
    auto* a = cmd.app;
    a->add_option("--ckpt", in.ckpt, "Checkpoint");
    a->add_option("--cube", in.cube, "Hyperspectral cube");
    a->add_option("--what", in.what, "superpixels | spatial-affinity | spectral-affinity");
    a->add_option("--out", in.out, "Output file");
    a->add_option("--pool", in.pool, "soft | hard (default: checkpoint setting)");
    cmd.required = {"ckpt", "cube", "what", "out"};
    cmd.action = [&] {
      if (in.what != "superpixels" && in.what != "spatial-affinity" && in.what != "spectral-affinity") {
        throw std::invalid_argument("--what must be superpixels, spatial-affinity or spectral-affinity");
      }
      const auto model = load_checkpoint(in.ckpt);
      const auto cube = data::load_cube(in.cube);
      require_model_fits(model, cube);
      const bool spatial = in.what != "spectral-affinity";
      if (spatial && !model.config.has_spatial()) {
        throw std::invalid_argument(std::string("variant '") + variant_name(model.config.variant) +
                                    "' has no spatial branch");
      }
      if (!spatial && !model.config.has_spectral()) {
        throw std::invalid_argument(std::string("variant '") + variant_name(model.config.variant) +
                                    "' has no spectral branch");
      }
      NoGradGuard no_grad;
      const auto pool = in.pool.empty() ? model.config.eval_pool : parse_pool(in.pool);
      const auto result = model.forward(prepare_input<float>(cube), ForwardOptions{.pool = pool});
      if (in.what == "superpixels") {
        const auto& hard = result.spatial->assignment.hard;
        std::vector<std::uint16_t> idx(hard.begin(), hard.end());
        pixmap::save_pgm(in.out, model.config.feature_height(), model.config.feature_width(), idx);
      } else if (in.what == "spatial-affinity") {
        write_matrix_csv(in.out, result.spatial->reprojection.affinity);
      } else {
        write_matrix_csv(in.out, result.spectral->affinity);
      }
      out << "wrote " << in.out << '\n';
    };
  }

  // complexity
  struct {
    std::string model = "ssgrn", widths = "64,128,256";
    std::size_t h = 0, w = 0, bands = 0, classes = 0, descriptors = 256, spectral_descriptors = 256;
    std::size_t head_hidden = 128, stride = 4;
  } cx;
  {
    auto& cmd = add_command("complexity", "Report parameter count and spatial attention inner products");
    auto* a = cmd.app;
    a->add_option("--model", cx.model, "fcn | sagrn | segrn | ssgrn")->capture_default_str();
    a->add_option("--h", cx.h, "Input height");
    a->add_option("--w", cx.w, "Input width");
    a->add_option("--bands", cx.bands, "Input bands");
    a->add_option("--classes", cx.classes, "Classes");
    a->add_option("--descriptors", cx.descriptors, "Spatial descriptors K")->capture_default_str();
    a->add_option("--spectral-descriptors", cx.spectral_descriptors, "Spectral descriptors M")
        ->capture_default_str();
    a->add_option("--widths", cx.widths, "Backbone widths a,b,c")->capture_default_str();
    a->add_option("--head-hidden", cx.head_hidden, "Classifier head width")->capture_default_str();
    a->add_option("--stride", cx.stride, "Spectral downsampling stride")->capture_default_str();
    cmd.required = {"h", "w", "bands", "classes"};
    cmd.action = [&] {
      ModelConfig mc;
      mc.in_bands = cx.bands;
      mc.height = cx.h;
      mc.width = cx.w;
      mc.classes = cx.classes;
      mc.widths = parse_widths(cx.widths);
      mc.descriptors = cx.descriptors;
      mc.spectral_descriptors = cx.spectral_descriptors;
      mc.variant = parse_variant(cx.model);
      mc.head_hidden = cx.head_hidden;
      mc.spectral_stride = cx.stride;
      const ModelState model(mc, 0);
      const std::uint64_t n = mc.feature_height() * mc.feature_width();
      out << "variant " << variant_name(mc.variant) << '\n' << "params " << count_params(model) << '\n';
      if (mc.has_spatial()) {
        out << "nodes " << n << '\n'
            << "descriptors " << mc.descriptors << '\n'
            << "attention_ops " << count_attention_ops(mc.descriptors, n) << '\n';
      } else {
        out << "attention_ops 0\n";
      }
    };
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    for (auto& [sub, cmd] : commands) {
      if (!sub->parsed()) continue;
      merge_config(cmd);
      check_required(cmd);
      cmd.action();
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ssgrn::cli
