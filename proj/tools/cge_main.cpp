#include <chrono>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "cge/cli.hpp"
#include "cge/errors.hpp"

namespace {

std::string default_outdir(const std::string& command, uint64_t seed) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    std::ostringstream os;
    os << "runs/" << command << "-" << secs << "-s" << seed;
    return os.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive generative exploration over tiny language models"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    std::vector<std::string> overrides;
    std::string outdir;

    for (const std::string& name : cge::cli::command_names()) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--set", overrides, "override config keys, e.g. --set train.epochs=1");
        sub->add_option("--outdir", outdir, "output directory (default runs/<command>-<time>-s<seed>)");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        const nlohmann::json cfg = cge::cli::resolve_config(config_path, overrides);
        const std::string out =
            outdir.empty() ? default_outdir(command, cfg.at("seed").get<uint64_t>()) : outdir;
        cge::cli::run_command(command, cfg, out);
        std::cout << "wrote " << out << "\n";
        return 0;
    } catch (const cge::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
}
