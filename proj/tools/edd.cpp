#include <edd/alloc.hpp>
#include <edd/io.hpp>
#include <edd/oracle.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

namespace {

using namespace edd;
using nlohmann::json;

enum Exit { ok = 0, usage = 1, infeasible = 2, numeric = 3, rank_exceeded = 4 };

struct Common {
  std::string config_path;
  std::string device;
  int threads = 0;
};

RunConfig load(const Common& c) {
  RunConfig cfg = load_config(c.config_path);
  if (!c.device.empty()) {
    cfg.device.kind = parse_device_kind(c.device);
    cfg.validate();
  }
  if (c.threads > 0) cfg.threads = c.threads;
  return cfg;
}

std::filesystem::path output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("EDD_OUTPUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) return {std::stoull(text)};
    const std::uint64_t lo = std::stoull(text.substr(0, dots)), hi = std::stoull(text.substr(dots + 2));
    if (hi < lo || hi - lo > 10000) throw ConfigError("--seeds: bad range " + text);
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("--seeds: expected N or A..B, got '" + text + "'");
  }
}

int exit_for(const SearchReport& r) {
  if (r.status == "infeasible") return infeasible;
  if (r.status == "numeric_abort") return numeric;
  return ok;
}

std::string describe(const DerivedDesign& d) {
  std::string s;
  for (std::size_t i = 0; i < d.blocks.size(); ++i) {
    const DesignBlock& b = d.blocks[i];
    s += (i ? " " : "") + std::to_string(b.op) + "/" + std::to_string(b.bits) + "b";
    if (d.device != DeviceKind::gpu_table) s += "/pf" + std::to_string(b.pf);
  }
  return s;
}

int cmd_search(const Common& common, std::optional<std::uint64_t> seed, const std::string& seeds_text) {
  RunConfig cfg = load(common);
  std::vector<std::uint64_t> seeds{cfg.search.seed};
  if (seed) seeds = {*seed};
  if (!seeds_text.empty()) seeds = parse_seeds(seeds_text);

  const Dataset data = cached_dataset(cfg.data, cfg.cache_dir);
  const Split parts = split(data, cfg.split, cfg.split_seed);
  const std::filesystem::path dir = output_dir(cfg);
  const std::string hash = config_hash(cfg);

  std::vector<SearchReport> reports(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex out_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t k = next++; k < seeds.size(); k = next++) {
      try {
        RunConfig run = cfg;
        run.search.seed = seeds[k];
        const auto start = std::chrono::steady_clock::now();
        SearchReport r = run_search(run.space, run.device, run.search, data, parts);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        const std::string tag = "seed" + std::to_string(seeds[k]);
        write_file((dir / ("report-" + tag + ".json")).string(), to_json(r, run).dump(2) + "\n");
        write_file((dir / ("curves-" + tag + ".csv")).string(), curves_csv(r, hash));
        if (r.design) {
          write_file((dir / ("design-" + tag + ".json")).string(),
                     to_json(*r.design, effective_space(run.space, run.device)).dump(2) + "\n");
        }
        const json info = {{"seed", seeds[k]}, {"config_hash", hash}, {"wall_clock_seconds", wall}};
        write_file((dir / ("run_info-" + tag + ".json")).string(), info.dump(2) + "\n");

        std::lock_guard lock(out_mutex);
        std::cerr << "seed " << seeds[k] << ": " << r.status;
        if (r.design) std::cerr << "  " << describe(*r.design);
        if (!r.message.empty()) std::cerr << "  (" << r.message << ")";
        std::cerr << "  " << format_double(wall) << " s\n";
        reports[k] = std::move(r);
      } catch (...) {
        std::lock_guard lock(out_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min<int>(cfg.threads, static_cast<int>(seeds.size()));
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  int code = ok;
  if (seeds.size() > 1) {
    std::string summary = "# config_hash=" + hash + "\n";
    summary += "seed,status,final_loss,latency,bottleneck,perf_loss,res,design\n";
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const SearchReport& r = reports[k];
      summary += std::to_string(seeds[k]) + "," + r.status + ",";
      summary += r.epochs.empty() ? "" : format_double(r.epochs.back().loss);
      if (r.design) {
        summary += "," + format_double(r.design->latency) + "," + format_double(r.design->bottleneck) +
                   "," + format_double(r.design->perf_loss) + "," + format_double(r.design->res) + "," +
                   describe(*r.design) + "\n";
      } else {
        summary += ",,,,,\n";
      }
    }
    write_file((dir / "summary.csv").string(), summary);
  }
  for (const auto& r : reports) code = std::max(code, exit_for(r));
  std::cout << "wrote " << seeds.size() << " run(s) to " << dir.string() << "\n";
  return code;
}

int cmd_enumerate(const Common& common) {
  const RunConfig cfg = load(common);
  const Dataset data = cached_dataset(cfg.data, cfg.cache_dir);
  const Split parts = split(data, cfg.split, cfg.split_seed);
  const OracleRanking ranking = rank_configs(cfg.space, cfg.device, cfg.search, cfg.oracle, data, parts,
                                             cfg.enumeration_cap, cfg.threads);
  const std::filesystem::path file = output_dir(cfg) / "ranking.csv";
  write_file(file.string(), ranking_csv(ranking, config_hash(cfg)));

  const SpaceConfig space = effective_space(cfg.space, cfg.device);
  std::cout << "rank  loss                  acc_loss              design\n";
  for (std::size_t k = 0; k < std::min<std::size_t>(5, ranking.entries.size()); ++k) {
    const OracleEntry& e = ranking.entries[k];
    std::string d;
    for (std::size_t i = 0; i < e.path.size(); ++i) {
      d += (i ? " " : "") + std::to_string(e.path[i].op) + "/" +
           std::to_string(space.quant[e.path[i].quant]) + "b/pf" + std::to_string(e.pf[i]);
    }
    std::printf("%-5zu %-21s %-21s %s\n", k + 1, format_double(e.loss).c_str(),
                format_double(e.acc_loss).c_str(), d.c_str());
  }
  std::cout << ranking.entries.size() << " ranked, " << ranking.excluded.size() << " excluded; wrote "
            << file.string() << "\n";
  return ok;
}

int cmd_eval(const Common& common, const std::string& design_path) {
  const RunConfig cfg = load(common);
  const SpaceConfig space = effective_space(cfg.space, cfg.device);
  DerivedDesign design = design_from_json(json::parse(read_file(design_path)));
  if (design.device != cfg.device.kind) {
    throw ConfigError("design targets " + to_string(design.device) + " but the config device is " +
                      to_string(cfg.device.kind));
  }
  if (design.blocks.size() != static_cast<std::size_t>(space.num_blocks())) {
    throw ConfigError("design has " + std::to_string(design.blocks.size()) + " blocks, space has " +
                      std::to_string(space.num_blocks()));
  }
  const double norm = initial_perf_norm(space, cfg.device);
  evaluate_design(design, space, cfg.device, cfg.search.hyper.alpha, norm);
  const Path path = design.path(space);

  const Dataset data = cached_dataset(cfg.data, cfg.cache_dir);
  const Split parts = split(data, cfg.split, cfg.split_seed);
  Supernet net(space, cfg.retrain.seed);
  train_path(net, path, data, parts.train, cfg.retrain);
  const EvalResult val = evaluate_path(net, path, data, parts.val);
  const EvalResult test = evaluate_path(net, path, data, parts.test);

  json out = {{"design", design_path},
              {"config_hash", config_hash(cfg)},
              {"val_loss", val.loss},
              {"val_accuracy", val.accuracy},
              {"test_loss", test.loss},
              {"test_accuracy", test.accuracy},
              {"latency", design.latency},
              {"bottleneck", design.bottleneck},
              {"perf_loss", design.perf_loss},
              {"res", design.res}};
  if (cfg.device.kind == DeviceKind::fpga_pipelined && design.bottleneck > 0) {
    out["throughput"] = 1.0 / design.bottleneck;
  }
  const std::filesystem::path file =
      output_dir(cfg) / ("eval-" + std::filesystem::path(design_path).stem().string() + ".json");
  write_file(file.string(), out.dump(2) + "\n");

  std::cout << "design      " << describe(design) << "\n"
            << "val acc     " << format_double(val.accuracy) << "\n"
            << "test acc    " << format_double(test.accuracy) << "\n"
            << "latency     " << format_double(design.latency) << "\n";
  if (out.contains("throughput")) std::cout << "throughput  " << format_double(out["throughput"].get<double>()) << "\n";
  if (cfg.device.is_fpga()) std::cout << "RES         " << format_double(design.res) << "\n";
  return ok;
}

int cmd_compare(const std::string& report_path, const std::string& ranking_path, int max_rank) {
  const json rj = json::parse(read_file(report_path));
  const SearchReport report = report_from_json(rj);
  const auto [ranking, ranking_hash] = parse_ranking_csv(read_file(ranking_path));
  const std::string report_hash = rj.at("config_hash").get<std::string>();
  if (report_hash != ranking_hash) {
    throw ConfigError("config hash mismatch: report " + report_hash + ", ranking " + ranking_hash);
  }
  if (!report.design) throw ConfigError("report has no design (status " + report.status + ")");
  if (ranking.entries.empty()) throw ConfigError("ranking has no entries");

  const RunConfig cfg = parse_config(rj.at("config").dump());
  const Path path = report.design->path(effective_space(cfg.space, cfg.device));
  const int rank = ranking.rank_of(path);
  const double best = ranking.entries.front().loss;
  std::cout << "seed        " << report.seed << "\n";
  if (rank == 0) {
    std::cout << "rank        unranked (excluded by the oracle)\n";
  } else {
    const double gap = ranking.entries[static_cast<std::size_t>(rank - 1)].loss - best;
    std::cout << "rank        " << rank << " of " << ranking.entries.size() << "\n"
              << "loss gap    " << format_double(gap) << "\n";
  }
  if (max_rank > 0 && (rank == 0 || rank > max_rank)) {
    std::cerr << "edd: rank exceeds --max-rank " << max_rank << "\n";
    return rank_exceeded;
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  edd::tune_allocator();
  CLI::App app{"Differentiable network/accelerator co-search"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--device", common.device, "device override: fpga_recursive, fpga_pipelined, gpu_table");
    sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* search = app.add_subcommand("search", "run the co-search");
  add_common(search);
  std::optional<std::uint64_t> seed;
  std::string seeds;
  auto* seed_opt = search->add_option("--seed", seed, "search seed");
  search->add_option("--seeds", seeds, "seed range A..B, one run per seed")->excludes(seed_opt);

  auto* enumerate = app.add_subcommand("enumerate", "rank every configuration by brute force");
  add_common(enumerate);

  auto* eval = app.add_subcommand("eval", "retrain a design and report exact metrics");
  add_common(eval);
  std::string design_path;
  eval->add_option("design", design_path, "design file")->required()->check(CLI::ExistingFile);

  auto* compare = app.add_subcommand("compare", "rank a search result against an oracle ranking");
  std::string report_path, ranking_path;
  int max_rank = 0;
  compare->add_option("report", report_path, "search report")->required()->check(CLI::ExistingFile);
  compare->add_option("ranking", ranking_path, "oracle ranking")->required()->check(CLI::ExistingFile);
  compare->add_option("--max-rank", max_rank, "fail with exit code 4 above this rank");

  auto* templ = app.add_subcommand("template", "print a commented default config");
  std::string template_out;
  templ->add_option("-o,--output", template_out, "write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*search) return cmd_search(common, seed, seeds);
    if (*enumerate) return cmd_enumerate(common);
    if (*eval) return cmd_eval(common, design_path);
    if (*compare) return cmd_compare(report_path, ranking_path, max_rank);
    if (template_out.empty()) {
      std::cout << config_template();
    } else {
      write_file(template_out, config_template());
    }
    return ok;
  } catch (const Infeasible& e) {
    std::cerr << "edd: infeasible: " << e.what() << "\n";
    return infeasible;
  } catch (const NumericError& e) {
    std::cerr << "edd: numerical abort: " << e.what() << "\n";
    return numeric;
  } catch (const std::exception& e) {
    std::cerr << "edd: " << e.what() << "\n";
    return usage;
  }
}
