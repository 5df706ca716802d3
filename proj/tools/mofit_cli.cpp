// mofit: command-line front end.
//
//   mofit <command> [--config run.json] [--section.key=value ...]
//
// Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 1 anything else.

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mofit/pipeline.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Common& common) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("-c,--config", common.config_file, "JSON run config merged over the defaults");
  sub->allow_extras();
  sub->footer("Any config key can be overridden as --section.key=value, e.g. --train.steps=500");
  return sub;
}

mofit::Json resolve(CLI::App* sub, Common& common) {
  for (const auto& extra : sub->remaining()) {
    if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos)
      throw mofit::ConfigError("unexpected argument '" + extra + "' (overrides look like --section.key=value)");
    common.overrides.push_back(extra);
  }
  return mofit::load_config(common.config_file, common.overrides);
}

int run(int argc, char** argv) {
  CLI::App app{"Caption-free membership inference on a toy conditional diffusion model"};
  app.require_subcommand(1);
  Common common;

  auto* synth = add_command(app, "synth", "generate the member / hold-out glyph dataset", common);
  auto* train = add_command(app, "train", "train the denoiser on the member split", common);
  auto* attack = add_command(app, "attack", "run the attack suite and write attack.csv", common);
  auto* eval = add_command(app, "eval", "score attack.csv into report.json and KDE curves", common);
  auto* gradcheck = add_command(app, "gradcheck", "finite-difference check of every gradient path", common);
  auto* ablate = add_command(app, "ablate", "compare surrogate input variants", common);
  auto* stability = add_command(app, "stability", "per target-noise seed AUC table", common);
  auto* early = add_command(app, "earlystop", "surrogate early-stopping threshold sweep", common);
  auto* config = add_command(app, "config", "print the resolved config", common);

  auto* serve = add_command(app, "serve", "serve the run's checkpoint over the oracle protocol", common);
  int port = 0;
  std::string record;
  serve->add_option("--port", port, "TCP port on 127.0.0.1 (0 picks a free one)");
  serve->add_option("--record", record, "write the request/response transcript here on shutdown");

  auto* replay = app.add_subcommand("replay", "replay a recorded transcript against a server");
  std::string endpoint, transcript;
  replay->add_option("--endpoint", endpoint, "host:port")->required();
  replay->add_option("--transcript", transcript, "transcript file")->required();

  CLI11_PARSE(app, argc, argv);

  if (replay->parsed()) {
    const auto t = mofit::parse_transcript(mofit::read_file(transcript));
    const auto r = mofit::replay_transcript(mofit::wire::parse_endpoint(endpoint), t);
    std::cout << "replayed " << r.pairs << " pairs, " << r.mismatches << " mismatches\n";
    return r.mismatches == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  const mofit::Json cfg = resolve(sub, common);

  if (sub == config) {
    std::cout << mofit::serialize_config(cfg);
  } else if (sub == synth) {
    const auto samples = mofit::cmd_synth(cfg);
    std::cout << "wrote " << samples.size() << " samples to " << mofit::RunPaths(cfg).dataset_dir().string() << "\n";
  } else if (sub == train) {
    const auto res = mofit::cmd_train(cfg);
    std::cout << "trained " << res.loss_curve.size() << " steps";
    if (!res.loss_curve.empty()) std::cout << ", final batch loss " << res.loss_curve.back();
    std::cout << "\n";
  } else if (sub == attack) {
    const auto out = mofit::cmd_attack(cfg);
    std::cout << "attacked " << out.records.size() << " queries, " << out.failures << " failed\n";
    if (out.numerical_failures > 0) return 3;
  } else if (sub == eval) {
    const auto out = mofit::cmd_eval(cfg);
    for (const auto& m : out.report.at("methods"))
      std::cout << m.at("method").get<std::string>() << ": auc=" << m.at("auc").get<double>()
                << " asr=" << m.at("asr").get<double>() << " tpr@1%fpr=" << m.at("tpr_at_1fpr").get<double>() << "\n";
  } else if (sub == gradcheck) {
    const bool ok = mofit::cmd_gradcheck(cfg);
    std::cout << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
    if (!ok) return 3;
  } else if (sub == ablate) {
    for (const auto& r : mofit::cmd_ablate(cfg))
      std::cout << r.mode << " eps=" << r.eps_noise << " auc=" << r.auc << " asr=" << r.asr << "\n";
  } else if (sub == stability) {
    const auto rows = mofit::cmd_stability(cfg);
    for (const auto& r : rows) std::cout << "eps_seed=" << r.eps_seed << " auc=" << r.auc << " asr=" << r.asr << "\n";
    std::cout << "auc std " << mofit::auc_spread(rows) << "\n";
  } else if (sub == early) {
    for (const auto& r : mofit::cmd_early_stop(cfg))
      std::cout << "fraction=" << r.fraction << " threshold=" << r.threshold << " mean_iters=" << r.mean_iterations
                << " auc=" << r.auc << "\n";
  } else if (sub == serve) {
    const mofit::DenoiserModel model = mofit::load_run_model(cfg);
    mofit::LoopbackServer server(model, mofit::schedule_config(cfg), port, !record.empty());
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "serving on " << server.endpoint().str() << std::endl;
    while (!g_stop) ::pause();
    server.stop();
    if (!record.empty()) mofit::atomic_write(record, mofit::serialize_transcript(server.transcript()));
    std::cout << "served " << server.requests_served() << " requests\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mofit::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const mofit::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
