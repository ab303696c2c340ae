// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "CLI11.hpp"
#include "acceptance.hpp"

int main(int argc, char** argv) {
    CLI::App app{"stpyr acceptance suite"};
    std::string config;
    std::string out = "accept_out";
    std::vector<int> only;
    app.add_option("--config", config, "config file (defaults are used when omitted)");
    app.add_option("--out", out, "artifact directory");
    app.add_option("--only", only, "criterion ids to run");
    CLI11_PARSE(app, argc, argv);
    try {
        acceptance::Options opt;
        if (!config.empty()) {
            opt.cfg = stpyr::load_config(config);
        }
        opt.out = out;
        opt.only = only;
        const auto results = acceptance::run(opt, std::cout);
        int failed = 0;
        for (const auto& r : results) {
            failed += !r.pass;
        }
        std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " criteria passed"
                  << std::endl;
        return failed == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
