#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace iontrap::cli {

inline constexpr std::uint64_t default_seed = 20240601;

inline constexpr int exit_ok = 0;
inline constexpr int exit_computation = 1;
inline constexpr int exit_config = 2;

// CSV headers; stable across versions.
inline constexpr const char* sites_header =
    "index,x_m,y_m,z_m,kind,negative_count,f1_Hz,f2_Hz,f3_Hz,u1x,u1y,u1z,u2x,u2y,u2z,u3x,u3y,u3z";
inline constexpr const char* modes_header =
    "index,x_m,y_m,z_m,f1_Hz,f2_Hz,f3_Hz,kappa1_V_per_m2,kappa2_V_per_m2,kappa3_V_per_m2,stable,"
    "u1x,u1y,u1z,u2x,u2y,u2z,u3x,u3y,u3z";
inline constexpr const char* voltages_header = "electrode_id,volts";
inline constexpr const char* residuals_header =
    "site,x_m,y_m,z_m,gradient_error_V_per_m,curvature_error_V_per_m2,gradient_free,curvature_free";
inline constexpr const char* control_summary_header = "label,u_c_V,rank,nullspace_dim,max_relative_residual";
inline constexpr const char* sweep_detuning_header = "u_V,delta_f_Hz";
inline constexpr const char* sweep_rotation_header = "u_V,angle_deg,angle_3d_deg,f_high_Hz,f_low_Hz";
inline constexpr const char* pattern_header = "j,i,x_m,y_m,value";
inline constexpr const char* rfopt_report_header =
    "objective,fragmentation,fractional_pixels,equality_rows,iterations,primal_residual,dual_infeasibility,"
    "complementary_slackness";
inline constexpr const char* flop_header = "t_s,p_down";
inline constexpr const char* thermometry_header = "ratio,nbar";
inline constexpr const char* heating_header = "t_s,mode,rate_quanta_per_s,nbar";
inline constexpr const char* tickle_header =
    "omega_exc_rad_s,amplitude_m,resonant_estimate_m,steady_amplitude_m,detectable";
inline constexpr const char* exchange_header = "d_m,omega_rad_s,omega_ex_rad_s,omega_ex_Hz";
inline constexpr const char* micromotion_header =
    "dx_m,dy_m,dz_m,ax_m,ay_m,az_m,q1,q2,q3,modulation_index,z_sensitivity_m";
inline constexpr const char* detection_header = "p_down,shots,threshold,inferred_p_down,expected_p_down,mean_counts";
inline constexpr const char* histogram_header = "p_down,counts,shots";
inline constexpr const char* ramp_header = "t_s,u_V,omega_rad_s,epsilon";
inline constexpr const char* fit_header =
    "phi_deg,phi_err_deg,nbar_a,nbar_a_err,nbar_b,nbar_b_err,rabi0_rad_s,rabi0_err_rad_s,chi2";
inline constexpr const char* flop_data_header = "transition,mode,t_s,p_down,shots";
inline constexpr const char* field_sample_header = "x,y,z,value,gx,gy,gz,hxx,hxy,hxz,hyy,hyz,hzz";

/// Runs one command line. Returns 0 on success, 1 on a computation error and
/// 2 on a configuration error. Diagnostics go to err; short summaries to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iontrap::cli
